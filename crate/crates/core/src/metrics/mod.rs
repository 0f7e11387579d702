//! Scoring: pass@k, coverage, agreement, error decomposition, Mann-Whitney U.
//!
//! Everything here is pure and deterministic; inputs come from judged
//! samples, outputs go straight into the metric tables.

mod decompose;
mod mann_whitney;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::prompts::Category;

pub use decompose::{
    classify_sample, decompose, golden_algorithm, DecompositionClass, DecompositionOutcome, DecompositionSummary, GoldenVote,
};
pub use mann_whitney::{
    exact_u_distribution, mann_whitney_exact_p, mann_whitney_normal_p, mann_whitney_u_one_sided, MannWhitney, PMethod, EXACT_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("pass@k domain error: n={n}, c={c}, k={k}")]
    DomainError { n: usize, c: usize, k: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("no correct samples")]
    NoCorrectSamples,
    #[error("sample {sample} of {problem_id} has no back-translated algorithm")]
    MissingBackTranslation { problem_id: String, sample: usize },
    #[error("sample {sample} of {problem_id} has no intended algorithm")]
    MissingIntended { problem_id: String, sample: usize },
    #[error("{problem_id}: no golden algorithm for a non-trivial problem")]
    MissingGolden { problem_id: String },
    #[error("inconsistent sample set {problem_id}: {reason}")]
    Inconsistent { problem_id: String, reason: String },
    #[error("non-finite observation")]
    NonFinite,
}

/// One judged sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub strategy: String,
    pub correct: bool,
    #[serde(default)]
    pub back_translated: Option<Category>,
    /// False when no code could be extracted from the reply.
    #[serde(default = "yes")]
    pub extraction_ok: bool,
}

fn yes() -> bool {
    true
}

impl SampleOutcome {
    pub fn new(strategy: impl Into<String>, correct: bool) -> Self {
        Self {
            strategy: strategy.into(),
            correct,
            back_translated: None,
            extraction_ok: true,
        }
    }

    pub fn with_back_translation(mut self, category: Category) -> Self {
        self.back_translated = Some(category);
        self
    }
}

/// The `n` samples drawn for one problem under one arm, `c` of them correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub problem_id: String,
    pub n: usize,
    pub c: usize,
    pub per_sample: Vec<SampleOutcome>,
}

impl SampleSet {
    pub fn from_outcomes(problem_id: impl Into<String>, per_sample: Vec<SampleOutcome>) -> Self {
        Self {
            problem_id: problem_id.into(),
            n: per_sample.len(),
            c: per_sample.iter().filter(|s| s.correct).count(),
            per_sample,
        }
    }

    /// Counts only, for callers that do not track individual samples.
    pub fn counts(problem_id: impl Into<String>, n: usize, c: usize) -> Self {
        Self {
            problem_id: problem_id.into(),
            n,
            c,
            per_sample: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |reason: String| MetricsError::Inconsistent {
            problem_id: self.problem_id.clone(),
            reason,
        };
        if self.c > self.n {
            return Err(bad(format!("c={} exceeds n={}", self.c, self.n)));
        }
        if !self.per_sample.is_empty() {
            if self.per_sample.len() != self.n {
                return Err(bad(format!("{} samples listed, n={}", self.per_sample.len(), self.n)));
            }
            let c = self.per_sample.iter().filter(|s| s.correct).count();
            if c != self.c {
                return Err(bad(format!("{c} correct flags, c={}", self.c)));
            }
        }
        Ok(())
    }

    pub fn pass_at_k(&self, k: usize) -> Result<f64, MetricsError> {
        pass_at_k(self.n, self.c, k)
    }
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`.
///
/// The ratio of binomials is evaluated as `prod_{i<k} (n-c-i)/(n-i)`, which
/// never forms a factorial.
///
/// ```
/// use narrative_harness::metrics::pass_at_k;
/// assert_eq!(pass_at_k(10, 1, 5).unwrap(), 0.5);
/// assert_eq!(pass_at_k(10, 0, 10).unwrap(), 0.0);
/// ```
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::DomainError { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut all_wrong = 1.0f64;
    for i in 0..k {
        all_wrong *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok((1.0 - all_wrong).clamp(0.0, 1.0))
}

/// Mean pass@k over problems.
pub fn mean_pass_at_k(sets: &[SampleSet], k: usize) -> Result<f64, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = 0.0;
    for s in sets {
        total += s.pass_at_k(k)?;
    }
    Ok(total / sets.len() as f64)
}

/// Fraction of problems with at least one correct sample.
pub fn coverage(sets: &[SampleSet]) -> Result<f64, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let covered = sets.iter().filter(|s| s.c >= 1).count();
    Ok(covered as f64 / sets.len() as f64)
}

/// Tallies behind an agreement ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub matched: usize,
    pub correct: usize,
    /// Correct samples left out because the back-translation or the intended
    /// category is unknown.
    pub skipped: usize,
}

impl AgreementCounts {
    pub fn ratio(&self) -> Result<f64, MetricsError> {
        if self.correct == 0 {
            return Err(MetricsError::NoCorrectSamples);
        }
        Ok(self.matched as f64 / self.correct as f64)
    }
}

/// Share of correct samples whose back-translated category equals the
/// intended one. `intended` is keyed by (problem id, sample index).
pub fn agreement_ratio(
    sets: &[SampleSet],
    intended: &HashMap<(String, usize), Category>,
) -> Result<f64, MetricsError> {
    let mut counts = AgreementCounts::default();
    for set in sets {
        for (i, s) in set.per_sample.iter().enumerate().filter(|(_, s)| s.correct) {
            let got = s.back_translated.ok_or_else(|| MetricsError::MissingBackTranslation {
                problem_id: set.problem_id.clone(),
                sample: i,
            })?;
            let want = intended
                .get(&(set.problem_id.clone(), i))
                .ok_or_else(|| MetricsError::MissingIntended {
                    problem_id: set.problem_id.clone(),
                    sample: i,
                })?;
            counts.correct += 1;
            counts.matched += usize::from(got == *want);
        }
    }
    counts.ratio()
}

/// Lenient form of [`agreement_ratio`]: samples missing either category are
/// counted in `skipped` instead of failing.
pub fn agreement_counts(sets: &[SampleSet], intended: &HashMap<(String, usize), Category>) -> AgreementCounts {
    let mut counts = AgreementCounts::default();
    for set in sets {
        for (i, s) in set.per_sample.iter().enumerate().filter(|(_, s)| s.correct) {
            match (s.back_translated, intended.get(&(set.problem_id.clone(), i))) {
                (Some(got), Some(want)) => {
                    counts.correct += 1;
                    counts.matched += usize::from(got == *want);
                }
                _ => counts.skipped += 1,
            }
        }
    }
    counts
}
