//! Run configuration (TOML).
//!
//! ```toml
//! output_dir = "runs/cf"
//! benchmark = "code_forces"
//! dataset = "data/codeforces.jsonl"
//! strategies = ["RS", "CoT", "NarrOnly", "NarrConcat"]
//! ks = [1, 5, 10]
//! narr_backend = "gpt"
//! solve_backend = "gpt"
//! alg_backend = "gpt"
//!
//! [filter]
//! max_length = 1000
//! min_rating = 2000
//! require_examples = true
//!
//! [[backends]]
//! backend_id = "gpt"
//! kind = "openai"
//! base_url = "https://api.openai.com/v1"
//! model_name = "gpt-4.1-mini"
//! credential_env_var = "OPENAI_API_KEY"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::backend::{ProviderConfig, ProviderKind, DEFAULT_MAX_TOKENS};
use crate::dataset::{DatasetFilterSpec, Source};
use crate::prompts::{PromptStrategy, StrategyKind};
use crate::sandbox::Limits;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Temperatures {
    #[serde(default = "narrative_temperature")]
    pub narrative: f64,
    #[serde(default = "code_temperature")]
    pub code: f64,
}

fn narrative_temperature() -> f64 {
    1.0
}

fn code_temperature() -> f64 {
    0.2
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            narrative: narrative_temperature(),
            code: code_temperature(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub sampling: u64,
    #[serde(default)]
    pub permutation: u64,
    #[serde(default)]
    pub misalignment: u64,
}

/// Seeded draw of long problems after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongSubset {
    pub min_length_exclusive: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub benchmark: Source,
    pub dataset: PathBuf,
    #[serde(default)]
    pub filter: DatasetFilterSpec,
    #[serde(default)]
    pub long_subset: Option<LongSubset>,
    /// Strategy names as accepted by [`PromptStrategy`]'s `FromStr`.
    pub strategies: Vec<String>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    pub narr_backend: String,
    pub solve_backend: String,
    pub alg_backend: String,
    #[serde(default = "default_n_variants")]
    pub n_variants: usize,
    /// Samples per problem for arms that do not use variants.
    #[serde(default = "default_samples")]
    pub samples_per_strategy: usize,
    /// Samples per variant (or paraphrase) for arms that do.
    #[serde(default = "one")]
    pub samples_per_variant: usize,
    #[serde(default = "default_n_variants")]
    pub paraphrase_count: usize,
    #[serde(default)]
    pub temperatures: Temperatures,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default = "yes")]
    pub back_translate: bool,
    /// Adds a `/no-io` twin of every eligible arm.
    #[serde(default)]
    pub example_io_ablation: bool,
    #[serde(default)]
    pub exact_match: bool,
    #[serde(default = "default_interpreter")]
    pub interpreter: String,
    #[serde(default = "default_parallel")]
    pub max_in_flight: usize,
    #[serde(default = "default_parallel")]
    pub parallel_exec: usize,
    /// Structural probe command line, e.g. `["python3", "astprobe.py"]`.
    #[serde(default)]
    pub probe_cmd: Vec<String>,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    pub backends: Vec<ProviderConfig>,
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 10]
}

fn default_n_variants() -> usize {
    5
}

fn default_samples() -> usize {
    10
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_interpreter() -> String {
    "python3".to_string()
}

fn default_parallel() -> usize {
    4
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, OrchestratorError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset);
        if let Some(t) = self.template_dir.as_mut() {
            fix(t);
        }
        for b in &mut self.backends {
            if let Some(s) = b.script.as_mut() {
                fix(s);
            }
        }
        if let Some(first) = self.probe_cmd.first_mut() {
            if first.contains('/') && Path::new(first.as_str()).is_relative() {
                *first = base.join(&*first).display().to_string();
            }
        }
        // probe scripts passed as arguments (`python3 probe.py`)
        for arg in self.probe_cmd.iter_mut().skip(1) {
            let candidate = base.join(&*arg);
            if Path::new(arg.as_str()).is_relative() && candidate.is_file() {
                *arg = candidate.display().to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        if self.n_variants == 0 {
            return bad("n_variants must be at least 1".into());
        }
        if self.samples_per_strategy == 0 || self.samples_per_variant == 0 {
            return bad("sample counts must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be non-empty and positive".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.max_in_flight == 0 || self.parallel_exec == 0 {
            return bad("max_in_flight and parallel_exec must be at least 1".into());
        }
        if self.limits.time_ms == 0 || self.limits.memory_mb == 0 {
            return bad("limits must be positive".into());
        }
        for t in [self.temperatures.narrative, self.temperatures.code] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("temperature {t} outside [0, 2]"));
            }
        }
        self.filter
            .validate()
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        let strategies = self.strategies()?;
        if strategies.is_empty() {
            return bad("no strategies configured".into());
        }
        if strategies.iter().any(|s| s.kind == StrategyKind::ParaphraseConcat) && self.paraphrase_count == 0 {
            return bad("paraphrase_count must be at least 1".into());
        }
        for id in [&self.narr_backend, &self.solve_backend, &self.alg_backend] {
            let Some(b) = self.backends.iter().find(|b| &b.backend_id == id) else {
                return bad(format!("backend `{id}` is not defined"));
            };
            if b.kind == ProviderKind::Mock && b.script.is_none() {
                return bad(format!("mock backend `{id}` needs a script"));
            }
        }
        Ok(())
    }

    pub fn strategies(&self) -> Result<Vec<PromptStrategy>, OrchestratorError> {
        let mut out: Vec<PromptStrategy> = Vec::new();
        for s in &self.strategies {
            let parsed: PromptStrategy = s.parse().map_err(|e: crate::prompts::PromptError| OrchestratorError::Config(e.to_string()))?;
            if out.iter().any(|o| o.label() == parsed.label()) {
                return Err(OrchestratorError::Config(format!("strategy `{s}` listed twice")));
            }
            out.push(parsed);
        }
        Ok(out)
    }

    pub fn backend(&self, id: &str) -> Result<&ProviderConfig, OrchestratorError> {
        self.backends
            .iter()
            .find(|b| b.backend_id == id)
            .ok_or_else(|| OrchestratorError::Config(format!("backend `{id}` is not defined")))
    }

    /// The settings that determine what a run produces. Execution knobs
    /// (parallelism, probe, output location) are left out so a run can be
    /// resumed with different ones.
    pub fn fingerprint(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["max_in_flight", "parallel_exec", "probe_cmd", "output_dir"] {
                map.remove(key);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
benchmark = "custom"
dataset = "problems.jsonl"
strategies = ["RS", "NarrOnly", "External:sot"]
narr_backend = "m"
solve_backend = "m"
alg_backend = "m"

[[backends]]
backend_id = "m"
kind = "mock"
script = "script.json"
"#;

    #[test]
    fn defaults_and_paths() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.n_variants, 5);
        assert_eq!(cfg.samples_per_strategy, 10);
        assert_eq!(cfg.samples_per_variant, 1);
        assert_eq!(cfg.temperatures, Temperatures { narrative: 1.0, code: 0.2 });
        assert_eq!(cfg.max_tokens, 4096);
        assert_eq!(cfg.limits, Limits::default());
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
        assert_eq!(cfg.backends[0].script.as_deref(), Some(Path::new("/base/script.json")));
        let labels: Vec<_> = cfg.strategies().unwrap().iter().map(|s| s.label()).collect();
        assert_eq!(labels, ["RS", "NarrOnly", "External:sot"]);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            MINIMAL.replace("strategies = [\"RS\", \"NarrOnly\", \"External:sot\"]", "strategies = [\"Bogus\"]"),
            MINIMAL.replace("alg_backend = \"m\"", "alg_backend = \"other\""),
            format!("{MINIMAL}\nn_variants = 0\n").replace("[[backends]]\n", "").replace("backend_id", "x"),
            MINIMAL.replace("output_dir", "outptu_dir"),
            MINIMAL.replace("strategies = [\"RS\",", "strategies = [\"RS\", \"RS\","),
        ];
        for text in cases {
            assert!(RunConfig::from_toml(&text, Path::new("/")).is_err(), "{text}");
        }
        let zero = MINIMAL.replacen("output_dir", "n_variants = 0\noutput_dir", 1);
        assert!(matches!(
            RunConfig::from_toml(&zero, Path::new("/")),
            Err(OrchestratorError::Config(m)) if m.contains("n_variants")
        ));
    }

    #[test]
    fn fingerprint_ignores_execution_knobs() {
        let a = RunConfig::from_toml(MINIMAL, Path::new("/")).unwrap();
        let mut b = a.clone();
        b.max_in_flight = 32;
        b.parallel_exec = 1;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seeds.sampling = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
