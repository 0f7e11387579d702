//! Post-run analyses. Each one reads [`RunData`] and produces a table plus a
//! plot-data file (long format, one point per row), or a
//! [`OrchestratorError::MissingField`] naming what the record lacks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::plan::{derive_seed, narrative_key, NarrSource, NO_IO_SUFFIX};
use super::tables::{decomposition, fmt_opt, mean_capped_pass_at_k, ArmData, MetricTables, RunData};
use super::OrchestratorError;
use crate::metrics::{mann_whitney_u_one_sided, DecompositionClass, PMethod};
use crate::probe::{ProbeClient, StructuralMetrics};
use crate::prompts::{Category, MisalignedGenreSet, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Analysis {
    Agreement,
    Decomposition,
    Permuted,
    Misaligned,
    ExampleIoAblation,
    NoTag,
    AstMetrics,
}

impl Analysis {
    pub const ALL: [Analysis; 7] = [
        Analysis::Agreement,
        Analysis::Decomposition,
        Analysis::Permuted,
        Analysis::Misaligned,
        Analysis::ExampleIoAblation,
        Analysis::NoTag,
        Analysis::AstMetrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Agreement => "Agreement",
            Analysis::Decomposition => "Decomposition",
            Analysis::Permuted => "Permuted",
            Analysis::Misaligned => "Misaligned",
            Analysis::ExampleIoAblation => "ExampleIOAblation",
            Analysis::NoTag => "NoTag",
            Analysis::AstMetrics => "AstMetrics",
        }
    }
}

impl FromStr for Analysis {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        Analysis::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| OrchestratorError::Config(format!("unknown analysis `{s}`")))
    }
}

/// Result of one analysis: file name -> contents, or why it could not run.
#[derive(Debug)]
pub struct AnalysisOutput {
    pub analysis: Analysis,
    pub result: Result<BTreeMap<String, String>, OrchestratorError>,
}

pub fn run_analysis(
    data: &RunData,
    analyses: &[Analysis],
    probe: Option<&ProbeClient>,
    parallelism: usize,
) -> Vec<AnalysisOutput> {
    analyses
        .iter()
        .map(|&analysis| AnalysisOutput {
            analysis,
            result: match analysis {
                Analysis::Agreement => agreement(data),
                Analysis::Decomposition => decomposition_files(data),
                Analysis::Permuted => permuted(data),
                Analysis::Misaligned => misaligned(data),
                Analysis::ExampleIoAblation => example_io(data),
                Analysis::NoTag => no_tag(data),
                Analysis::AstMetrics => ast_metrics(data, probe, parallelism),
            },
        })
        .collect()
}

fn missing(a: Analysis, what: impl Into<String>) -> OrchestratorError {
    OrchestratorError::MissingField(a.name().to_string(), what.into())
}

fn require_arm<'a>(data: &'a RunData, a: Analysis, label: &str) -> Result<&'a ArmData, OrchestratorError> {
    data.arm(label).ok_or_else(|| missing(a, format!("arm {label}")))
}

fn files(entries: [(&str, String); 2]) -> BTreeMap<String, String> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// pass@k of each arm at the configured ks, one row per (arm, k).
fn comparison(data: &RunData, arms: &[(&str, &ArmData)]) -> Result<String, OrchestratorError> {
    let mut t = String::from("series\tarm\tk\tproblems\tpass_at_k\n");
    for (series, arm) in arms {
        for &k in &data.config.ks {
            let (problems, v) = mean_capped_pass_at_k(arm, k).map_err(|e| OrchestratorError::Io(e.to_string()))?;
            let _ = writeln!(t, "{series}\t{}\t{k}\t{problems}\t{}", arm.label, fmt_opt(v));
        }
    }
    Ok(t)
}

/// pass@k curves for k = 1..=largest per-problem sample count.
fn curves(arms: &[(&str, &ArmData)]) -> Result<String, OrchestratorError> {
    let max_n = arms
        .iter()
        .flat_map(|(_, a)| a.samples.values().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut t = String::from("series\tk\tpass_at_k\n");
    for (series, arm) in arms {
        for k in 1..=max_n {
            let (_, v) = mean_capped_pass_at_k(arm, k).map_err(|e| OrchestratorError::Io(e.to_string()))?;
            let _ = writeln!(t, "{series}\t{k}\t{}", fmt_opt(v));
        }
    }
    Ok(t)
}

fn agreement(data: &RunData) -> Result<BTreeMap<String, String>, OrchestratorError> {
    if !data.config.back_translate {
        return Err(missing(Analysis::Agreement, "back-translations (back_translate is off)"));
    }
    let tables = MetricTables::compute(data)?;
    let table = tables.files["agreement.tsv"].clone();
    let mut plot = String::from("arm\tintended\tcorrect\tmatched\n");
    for arm in &data.arm_data {
        let mut by_cat: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for s in arm.samples.values().flatten().filter(|s| s.correct) {
            if let (Some(want), Some(got)) = (s.intended, s.back_translated) {
                let e = by_cat.entry(want).or_default();
                e.0 += 1;
                e.1 += usize::from(want == got);
            }
        }
        for (cat, (correct, matched)) in by_cat {
            let _ = writeln!(plot, "{}\t{}\t{correct}\t{matched}", arm.label, cat.name());
        }
    }
    Ok(files([("agreement.tsv", table), ("agreement_by_category.tsv", plot)]))
}

fn decomposition_files(data: &RunData) -> Result<BTreeMap<String, String>, OrchestratorError> {
    let a = Analysis::Decomposition;
    if !data.config.back_translate {
        return Err(missing(a, "back-translations (back_translate is off)"));
    }
    let d = decomposition(data).ok_or_else(|| missing(a, "arm RS and a narrative arm"))?;
    let tables = MetricTables::compute(data)?;
    let mut plot = String::from("condition\tclass\tshare\n");
    for (condition, s) in [("original", &d.summaries[0]), ("narrative", &d.summaries[1])] {
        for (class, name) in [
            (DecompositionClass::CorrectSolution, "correct_solution"),
            (DecompositionClass::ImplementationError, "implementation_error"),
            (DecompositionClass::WrongAlgorithm, "wrong_algorithm"),
        ] {
            let _ = writeln!(plot, "{condition}\t{name}\t{}", fmt_opt(s.ratio(class)));
        }
    }
    Ok(files([
        ("decomposition.tsv", tables.files["decomposition.tsv"].clone()),
        ("decomposition_shares.tsv", plot),
    ]))
}

fn permuted(data: &RunData) -> Result<BTreeMap<String, String>, OrchestratorError> {
    let a = Analysis::Permuted;
    let arms = [
        ("Original", require_arm(data, a, StrategyKind::RepeatedSampling.label())?),
        ("Complete", require_arm(data, a, StrategyKind::NarrativeOnly.label())?),
        ("Permuted", require_arm(data, a, StrategyKind::Permuted.label())?),
    ];
    Ok(files([
        ("permuted.tsv", comparison(data, &arms)?),
        ("permuted_curves.tsv", curves(&arms)?),
    ]))
}

fn misaligned(data: &RunData) -> Result<BTreeMap<String, String>, OrchestratorError> {
    let a = Analysis::Misaligned;
    let arms = [
        ("Aligned", require_arm(data, a, StrategyKind::NarrativeOnly.label())?),
        ("Misaligned", require_arm(data, a, StrategyKind::Misaligned.label())?),
    ];
    let genres = MisalignedGenreSet::default();
    let mut plot = String::from("problem_id\tvariant\tinjected_genre\tgroup\tvalid\tcollides\n");
    let mut collisions = 0;
    for (pid, narr) in &data.narratives {
        for v in narr.all(NarrSource::Misaligned) {
            let key = narrative_key(pid, NarrSource::Misaligned, v.variant_index);
            let genre = genres.draw(derive_seed(data.config.seeds.misalignment, &key));
            // a freely chosen genre equal to the injected one weakens the contrast
            let collides = narr
                .all(NarrSource::Tagged)
                .iter()
                .filter_map(|t| t.genre.as_deref())
                .any(|g| g.trim().eq_ignore_ascii_case(genre));
            collisions += usize::from(collides);
            let _ = writeln!(
                plot,
                "{pid}\t{}\t{genre}\t{}\t{}\t{collides}",
                v.variant_index,
                genres.group_of(genre).unwrap_or("NA"),
                v.is_valid()
            );
        }
    }
    if collisions > 0 {
        log::warn!("{collisions} injected genres coincide with a genre the generator chose freely");
    }
    Ok(files([("misaligned.tsv", comparison(data, &arms)?), ("misaligned_genres.tsv", plot)]))
}

fn example_io(data: &RunData) -> Result<BTreeMap<String, String>, OrchestratorError> {
    let a = Analysis::ExampleIoAblation;
    if !data.config.example_io_ablation {
        return Err(missing(a, "no-io arms (example_io_ablation is off)"));
    }
    let mut arms: Vec<(&str, &ArmData)> = Vec::new();
    for arm in &data.arm_data {
        if arm.label.ends_with(NO_IO_SUFFIX) {
            continue;
        }
        if let Some(twin) = data.arm(&format!("{}{NO_IO_SUFFIX}", arm.label)) {
            arms.push((arm.label.as_str(), arm));
            arms.push((twin.label.as_str(), twin));
        }
    }
    Ok(files([
        ("example_io.tsv", comparison(data, &arms)?),
        ("example_io_curves.tsv", curves(&arms)?),
    ]))
}

fn no_tag(data: &RunData) -> Result<BTreeMap<String, String>, OrchestratorError> {
    let a = Analysis::NoTag;
    let arms = [
        ("Tagged", require_arm(data, a, StrategyKind::NarrativeOnly.label())?),
        ("NoTag", require_arm(data, a, StrategyKind::NoTagNarrative.label())?),
    ];
    Ok(files([("notag.tsv", comparison(data, &arms)?), ("notag_curves.tsv", curves(&arms)?)]))
}

const AST_HEADER: &str = "metric\trs_n\trs_mean\tnarrative_n\tnarrative_mean\tu\tp\tmethod\tnote\n";

fn ast_metrics(
    data: &RunData,
    probe: Option<&ProbeClient>,
    parallelism: usize,
) -> Result<BTreeMap<String, String>, OrchestratorError> {
    let a = Analysis::AstMetrics;
    let rs = require_arm(data, a, StrategyKind::RepeatedSampling.label())?;
    let narr = data.narrative_condition().ok_or_else(|| missing(a, "a narrative arm"))?;
    let Some(probe) = probe else {
        let mut t = String::from(AST_HEADER);
        t.push_str("all\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tprobe unavailable\n");
        return Ok(files([("ast_metrics.tsv", t), ("ast_samples.tsv", String::from("arm\tkey\tstatus\n"))]));
    };

    let mut samples = String::from("arm\tkey\tstatus\tparse_ok\tfunction_count\thas_helper\tmax_depth\n");
    let mut per_arm: Vec<Vec<StructuralMetrics>> = Vec::new();
    for arm in [rs, narr] {
        let correct: Vec<(&str, &str)> = arm
            .samples
            .values()
            .flatten()
            .filter(|s| s.correct)
            .map(|s| (s.key.as_str(), s.code.as_str()))
            .collect();
        let sources: Vec<String> = correct.iter().map(|(_, c)| c.to_string()).collect();
        let mut ok = Vec::new();
        for ((key, _), r) in correct.iter().zip(probe.probe_all(&sources, parallelism)) {
            match r {
                Ok(m) => {
                    let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
                    let _ = writeln!(
                        samples,
                        "{}\t{key}\tok\t{}\t{}\t{}\t{}",
                        arm.label,
                        m.parse_ok,
                        opt(m.function_count.map(|x| x.to_string())),
                        opt(m.has_helper.map(|x| x.to_string())),
                        opt(m.max_depth.map(|x| x.to_string()))
                    );
                    if m.parse_ok {
                        ok.push(m);
                    }
                }
                Err(e) => {
                    // flagged, never fatal
                    let _ = writeln!(samples, "{}\t{key}\tmissing: {e}\tNA\tNA\tNA\tNA", arm.label);
                }
            }
        }
        per_arm.push(ok);
    }

    let mut t = String::from(AST_HEADER);
    type Getter = fn(&StructuralMetrics) -> f64;
    let metrics: [(&str, Getter); 3] = [
        ("function_count", |m| f64::from(m.function_count.unwrap_or(0))),
        ("helper_rate", |m| f64::from(u8::from(m.has_helper.unwrap_or(false)))),
        ("max_depth", |m| f64::from(m.max_depth.unwrap_or(0))),
    ];
    for (name, get) in metrics {
        let b: Vec<f64> = per_arm[0].iter().map(get).collect();
        let a_: Vec<f64> = per_arm[1].iter().map(get).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        // one-sided: narrative solutions larger than RS solutions
        let (u, p, method, note) = match mann_whitney_u_one_sided(&a_, &b) {
            Ok(r) => (
                format!("{:.6}", r.u),
                format!("{:.6}", r.p),
                match r.method {
                    PMethod::Exact => "exact",
                    PMethod::Normal => "normal",
                },
                String::new(),
            ),
            Err(e) => ("NA".into(), "NA".into(), "NA", e.to_string()),
        };
        let _ = writeln!(
            t,
            "{name}\t{}\t{}\t{}\t{}\t{u}\t{p}\t{method}\t{note}",
            b.len(),
            fmt_opt(mean(&b)),
            a_.len(),
            fmt_opt(mean(&a_))
        );
    }
    Ok(files([("ast_metrics.tsv", t), ("ast_samples.tsv", samples)]))
}
