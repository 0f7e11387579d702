//! Golden-algorithm voting and the three-way error decomposition.

use serde::{Deserialize, Serialize};

use super::{MetricsError, SampleOutcome};
use crate::prompts::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecompositionClass {
    CorrectSolution,
    ImplementationError,
    WrongAlgorithm,
}

/// Result of the majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenVote {
    pub category: Category,
    pub votes: usize,
    /// Another category had the same number of votes; the winner is the one
    /// listed first in [`Category::ALL`].
    pub tie: bool,
}

/// Modal category among back-translations of correct solutions, pooled over
/// the original and narrative prompt forms.
pub fn golden_algorithm(categories: &[Category]) -> Option<GoldenVote> {
    let mut votes = [0usize; 8];
    for c in categories {
        votes[c.index()] += 1;
    }
    let best = *votes.iter().max()?;
    if best == 0 {
        return None;
    }
    let first = votes.iter().position(|&v| v == best)?;
    Some(GoldenVote {
        category: Category::ALL[first],
        votes: best,
        tie: votes.iter().filter(|&&v| v == best).count() > 1,
    })
}

/// Per-condition class counts for one problem.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionOutcome {
    pub correct_solution: usize,
    pub implementation_error: usize,
    pub wrong_algorithm: usize,
    /// Incorrect samples with no extractable code, left out of the three
    /// classes.
    pub unclassified: usize,
    pub golden_algorithm: Option<Category>,
    pub excluded_trivial: bool,
}

impl DecompositionOutcome {
    pub fn count(&self, class: DecompositionClass) -> usize {
        match class {
            DecompositionClass::CorrectSolution => self.correct_solution,
            DecompositionClass::ImplementationError => self.implementation_error,
            DecompositionClass::WrongAlgorithm => self.wrong_algorithm,
        }
    }

    pub fn classified(&self) -> usize {
        self.correct_solution + self.implementation_error + self.wrong_algorithm
    }

    fn add(&mut self, class: DecompositionClass) {
        match class {
            DecompositionClass::CorrectSolution => self.correct_solution += 1,
            DecompositionClass::ImplementationError => self.implementation_error += 1,
            DecompositionClass::WrongAlgorithm => self.wrong_algorithm += 1,
        }
    }
}

pub fn classify_sample(sample: &SampleOutcome, golden: Category) -> Option<DecompositionClass> {
    if sample.correct {
        Some(DecompositionClass::CorrectSolution)
    } else {
        match sample.back_translated {
            Some(c) if c == golden => Some(DecompositionClass::ImplementationError),
            Some(_) => Some(DecompositionClass::WrongAlgorithm),
            None => None,
        }
    }
}

/// Decomposes the samples of one problem under the original and narrative
/// conditions. The problem is trivial when both conditions are entirely
/// correct or both entirely incorrect; trivial problems still get counts but
/// are flagged so aggregates can skip them.
pub fn decompose(
    problem_id: &str,
    original: &[SampleOutcome],
    narrative: &[SampleOutcome],
    golden: Option<Category>,
) -> Result<[DecompositionOutcome; 2], MetricsError> {
    let all_correct = |s: &[SampleOutcome]| s.iter().all(|x| x.correct);
    let all_wrong = |s: &[SampleOutcome]| s.iter().all(|x| !x.correct);
    let trivial = (all_correct(original) && all_correct(narrative)) || (all_wrong(original) && all_wrong(narrative));

    let condition = |samples: &[SampleOutcome]| -> Result<DecompositionOutcome, MetricsError> {
        let mut out = DecompositionOutcome {
            golden_algorithm: golden,
            excluded_trivial: trivial,
            ..DecompositionOutcome::default()
        };
        for (i, s) in samples.iter().enumerate() {
            if s.correct {
                out.add(DecompositionClass::CorrectSolution);
                continue;
            }
            if !s.extraction_ok {
                out.unclassified += 1;
                continue;
            }
            let Some(g) = golden else {
                if trivial {
                    out.unclassified += 1;
                    continue;
                }
                return Err(MetricsError::MissingGolden {
                    problem_id: problem_id.to_string(),
                });
            };
            match classify_sample(s, g) {
                Some(class) => out.add(class),
                None => {
                    return Err(MetricsError::MissingBackTranslation {
                        problem_id: problem_id.to_string(),
                        sample: i,
                    })
                }
            }
        }
        Ok(out)
    };
    Ok([condition(original)?, condition(narrative)?])
}

/// Pooled class shares over the non-trivial problems of one condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub problems: usize,
    pub excluded_trivial: usize,
    pub correct_solution: usize,
    pub implementation_error: usize,
    pub wrong_algorithm: usize,
    pub unclassified: usize,
}

impl DecompositionSummary {
    pub fn aggregate<'a>(outcomes: impl IntoIterator<Item = &'a DecompositionOutcome>) -> Self {
        let mut s = Self::default();
        for o in outcomes {
            if o.excluded_trivial {
                s.excluded_trivial += 1;
                continue;
            }
            s.problems += 1;
            s.correct_solution += o.correct_solution;
            s.implementation_error += o.implementation_error;
            s.wrong_algorithm += o.wrong_algorithm;
            s.unclassified += o.unclassified;
        }
        s
    }

    pub fn classified(&self) -> usize {
        self.correct_solution + self.implementation_error + self.wrong_algorithm
    }

    /// Share of classified samples in `class`; `None` when nothing was
    /// classified.
    pub fn ratio(&self, class: DecompositionClass) -> Option<f64> {
        let total = self.classified();
        let n = match class {
            DecompositionClass::CorrectSolution => self.correct_solution,
            DecompositionClass::ImplementationError => self.implementation_error,
            DecompositionClass::WrongAlgorithm => self.wrong_algorithm,
        };
        (total > 0).then(|| n as f64 / total as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Category::*;

    fn ok() -> SampleOutcome {
        SampleOutcome::new("RS", true)
    }

    fn bad(cat: Category) -> SampleOutcome {
        SampleOutcome::new("RS", false).with_back_translation(cat)
    }

    #[test]
    fn majority_and_ties() {
        let v = golden_algorithm(&[DynamicProgramming, DynamicProgramming, GreedyAlgorithms]).unwrap();
        assert_eq!((v.category, v.votes, v.tie), (DynamicProgramming, 2, false));
        assert_eq!(golden_algorithm(&[]), None);
        let v = golden_algorithm(&[GreedyAlgorithms, DynamicProgramming]).unwrap();
        assert_eq!((v.category, v.tie), (DynamicProgramming, true));
    }

    #[test]
    fn trivial_problems_are_flagged() {
        let [o, n] = decompose("p", &[ok(), ok()], &[ok()], Some(GraphAlgorithms)).unwrap();
        assert!(o.excluded_trivial && n.excluded_trivial);
        let [o, _] = decompose("p", &[bad(GraphAlgorithms)], &[bad(DataStructures)], None).unwrap();
        assert!(o.excluded_trivial);
        assert_eq!(o.classified(), 0);
        assert_eq!(o.unclassified, 1);
    }

    #[test]
    fn classes_follow_golden() {
        let [o, n] = decompose(
            "p",
            &[ok(), bad(GraphAlgorithms), bad(DataStructures)],
            &[bad(GraphAlgorithms), bad(GraphAlgorithms)],
            Some(GraphAlgorithms),
        )
        .unwrap();
        assert!(!o.excluded_trivial);
        assert_eq!((o.correct_solution, o.implementation_error, o.wrong_algorithm), (1, 1, 1));
        assert_eq!((n.correct_solution, n.implementation_error, n.wrong_algorithm), (0, 2, 0));
        assert_eq!(o.classified(), 3);
    }

    #[test]
    fn missing_back_translation_is_an_error() {
        let err = decompose("p", &[ok(), SampleOutcome::new("RS", false)], &[ok()], Some(GraphAlgorithms)).unwrap_err();
        assert_eq!(
            err,
            MetricsError::MissingBackTranslation {
                problem_id: "p".into(),
                sample: 1
            }
        );
    }

    #[test]
    fn extraction_failures_are_unclassified() {
        let mut s = SampleOutcome::new("RS", false);
        s.extraction_ok = false;
        let [o, _] = decompose("p", &[ok(), s], &[ok()], Some(GraphAlgorithms)).unwrap();
        assert_eq!((o.classified(), o.unclassified), (1, 1));
    }

    #[test]
    fn summary_skips_trivial() {
        let a = DecompositionOutcome {
            correct_solution: 2,
            implementation_error: 1,
            wrong_algorithm: 1,
            ..Default::default()
        };
        let t = DecompositionOutcome {
            correct_solution: 10,
            excluded_trivial: true,
            ..Default::default()
        };
        let s = DecompositionSummary::aggregate([&a, &t]);
        assert_eq!((s.problems, s.excluded_trivial, s.classified()), (1, 1, 4));
        assert_eq!(s.ratio(DecompositionClass::WrongAlgorithm), Some(0.25));
        assert_eq!(DecompositionSummary::default().ratio(DecompositionClass::CorrectSolution), None);
    }
}
