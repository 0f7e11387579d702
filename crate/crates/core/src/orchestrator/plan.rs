//! What a run asks for: arms, record keys, seeds and the solver slots each
//! arm gets for a problem. Everything here is a pure function of the config
//! and the recorded replies, so the pipeline and the metric tables agree on
//! it without sharing state.
//!
//! Key layout:
//!
//! ```text
//! narr/{problem}/{tagged|notag|misaligned|paraphrase}/{j}     j = 1..
//! solve/{problem}/{arm}/{slot}/{sample}                       slot 0 = no variant
//! alg/{problem}/{arm}/{slot}/{sample}[/retry]
//! ```

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::record::RecordState;
use crate::dataset::Problem;
use crate::metrics::golden_algorithm;
use crate::prompts::{
    concat_paraphrases, permute_variants, strip_example_io, strip_examples, Category, NarrativeVariant, PromptBook,
    PromptError, PromptStrategy, StrategyKind,
};

/// Suffix of the example-I/O ablation twin of an arm.
pub const NO_IO_SUFFIX: &str = "/no-io";
/// Label of the pooled NarrOnly + NarrConcat arm.
pub const NARR_AGGREGATE: &str = "Narr";

/// Seed for one named draw: the first 8 bytes of `sha256(base || key)`.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Kinds of generator output a problem can need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NarrSource {
    Tagged,
    NoTag,
    Misaligned,
    Paraphrase,
}

impl NarrSource {
    pub const ALL: [NarrSource; 4] = [
        NarrSource::Tagged,
        NarrSource::NoTag,
        NarrSource::Misaligned,
        NarrSource::Paraphrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NarrSource::Tagged => "tagged",
            NarrSource::NoTag => "notag",
            NarrSource::Misaligned => "misaligned",
            NarrSource::Paraphrase => "paraphrase",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }

    /// Whether replies carry the category and genre sections.
    pub fn include_tags(self) -> bool {
        matches!(self, NarrSource::Tagged | NarrSource::Misaligned)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmInput {
    /// The problem statement itself.
    Problem,
    /// One slot per valid variant of a source.
    Variants(NarrSource),
    /// Spliced tagged variants, one per valid tagged variant.
    Permuted,
    /// One slot per paraphrase, replacing the statement.
    Paraphrases,
    /// All paraphrases joined into one statement.
    ParaphraseConcat,
}

/// One sampled condition: a strategy, possibly with public examples removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub strategy: PromptStrategy,
    pub input: ArmInput,
    pub no_io: bool,
}

impl Arm {
    fn new(strategy: PromptStrategy, no_io: bool) -> Self {
        let input = match strategy.kind {
            StrategyKind::RepeatedSampling | StrategyKind::CoT | StrategyKind::SCoT | StrategyKind::ExternalTemplate => {
                ArmInput::Problem
            }
            StrategyKind::NarrativeOnly | StrategyKind::NarrativeConcat => ArmInput::Variants(NarrSource::Tagged),
            StrategyKind::NoTagNarrative => ArmInput::Variants(NarrSource::NoTag),
            StrategyKind::Misaligned => ArmInput::Variants(NarrSource::Misaligned),
            StrategyKind::Permuted => ArmInput::Permuted,
            StrategyKind::Paraphrase => ArmInput::Paraphrases,
            StrategyKind::ParaphraseConcat => ArmInput::ParaphraseConcat,
        };
        let label = if no_io {
            format!("{}{NO_IO_SUFFIX}", strategy.label())
        } else {
            strategy.label()
        };
        Self {
            label,
            strategy,
            input,
            no_io,
        }
    }

    /// Arms in strategy order; with the ablation each eligible arm is
    /// followed by its `/no-io` twin. Paraphrase and external-template arms
    /// have no twin.
    pub fn for_strategies(strategies: &[PromptStrategy], ablation: bool) -> Vec<Arm> {
        let mut out = Vec::new();
        for s in strategies {
            out.push(Arm::new(s.clone(), false));
            let twin = !matches!(
                s.kind,
                StrategyKind::Paraphrase | StrategyKind::ParaphraseConcat | StrategyKind::ExternalTemplate
            );
            if ablation && twin {
                out.push(Arm::new(s.clone(), true));
            }
        }
        out
    }

    /// Samples a problem should get when every generator output is usable.
    pub fn planned_samples(&self, cfg: &RunConfig) -> usize {
        match self.input {
            ArmInput::Problem | ArmInput::ParaphraseConcat => cfg.samples_per_strategy,
            ArmInput::Paraphrases => cfg.paraphrase_count * cfg.samples_per_variant,
            ArmInput::Variants(_) | ArmInput::Permuted => cfg.n_variants * cfg.samples_per_variant,
        }
    }
}

/// Pooled arms: `Narr` = NarrOnly + NarrConcat (and the same for the
/// `/no-io` twins), present only when both parts are.
pub fn aggregate_arms(arms: &[Arm]) -> Vec<(String, Vec<String>)> {
    let mut out = Vec::new();
    for suffix in ["", NO_IO_SUFFIX] {
        let parts = [
            format!("{}{suffix}", StrategyKind::NarrativeOnly.label()),
            format!("{}{suffix}", StrategyKind::NarrativeConcat.label()),
        ];
        if parts.iter().all(|p| arms.iter().any(|a| &a.label == p)) {
            out.push((format!("{NARR_AGGREGATE}{suffix}"), parts.to_vec()));
        }
    }
    out
}

pub fn narrative_key(problem_id: &str, source: NarrSource, j: usize) -> String {
    format!("narr/{problem_id}/{}/{j}", source.as_str())
}

pub fn solve_key(problem_id: &str, arm: &str, slot: usize, sample: usize) -> String {
    format!("solve/{problem_id}/{arm}/{slot}/{sample}")
}

pub fn alg_key(problem_id: &str, arm: &str, slot: usize, sample: usize, retry: bool) -> String {
    let base = format!("alg/{problem_id}/{arm}/{slot}/{sample}");
    if retry {
        base + "/retry"
    } else {
        base
    }
}

/// Generator calls per problem for each source the arms need. Tagged
/// variants are also generated for problem-only arms when back-translation
/// is on, since their intended category comes from them.
pub fn narrative_counts(arms: &[Arm], cfg: &RunConfig) -> Vec<(NarrSource, usize)> {
    let uses = |f: &dyn Fn(&ArmInput) -> bool| arms.iter().any(|a| f(&a.input));
    let mut out = Vec::new();
    let tagged = uses(&|i| matches!(i, ArmInput::Variants(NarrSource::Tagged) | ArmInput::Permuted))
        || (cfg.back_translate && uses(&|i| matches!(i, ArmInput::Problem | ArmInput::ParaphraseConcat)))
        || uses(&|i| matches!(i, ArmInput::Variants(NarrSource::Misaligned)));
    if tagged {
        out.push((NarrSource::Tagged, cfg.n_variants));
    }
    if uses(&|i| matches!(i, ArmInput::Variants(NarrSource::NoTag))) {
        out.push((NarrSource::NoTag, cfg.n_variants));
    }
    if uses(&|i| matches!(i, ArmInput::Variants(NarrSource::Misaligned))) {
        out.push((NarrSource::Misaligned, cfg.n_variants));
    }
    if uses(&|i| matches!(i, ArmInput::Paraphrases | ArmInput::ParaphraseConcat)) {
        out.push((NarrSource::Paraphrase, cfg.paraphrase_count));
    }
    out
}

/// Recorded generator output for one problem. Slots whose call failed are
/// absent.
#[derive(Debug, Clone, Default)]
pub struct ProblemNarratives {
    pub variants: BTreeMap<NarrSource, Vec<NarrativeVariant>>,
    /// `(j, text)` for every non-empty paraphrase.
    pub paraphrases: Vec<(usize, String)>,
}

impl ProblemNarratives {
    pub fn from_record(state: &RecordState, cfg: &RunConfig, problem_id: &str, counts: &[(NarrSource, usize)]) -> Self {
        let mut out = Self::default();
        for &(source, count) in counts {
            for j in 1..=count {
                let Some(reply) = state.reply(&narrative_key(problem_id, source, j)) else {
                    continue;
                };
                if source == NarrSource::Paraphrase {
                    if !reply.trim().is_empty() {
                        out.paraphrases.push((j, reply.trim().to_string()));
                    }
                } else {
                    let v = NarrativeVariant::parse(
                        problem_id,
                        j,
                        reply,
                        cfg.max_tokens as usize,
                        source.include_tags(),
                    );
                    out.variants.entry(source).or_default().push(v);
                }
            }
        }
        out
    }

    pub fn all(&self, source: NarrSource) -> &[NarrativeVariant] {
        self.variants.get(&source).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn valid(&self, source: NarrSource) -> Vec<&NarrativeVariant> {
        self.all(source).iter().filter(|v| v.is_valid()).collect()
    }

    /// Most frequent category among valid tagged variants.
    pub fn majority_category(&self) -> Option<Category> {
        let cats: Vec<Category> = self
            .valid(NarrSource::Tagged)
            .iter()
            .filter_map(|v| v.algorithm_category)
            .collect();
        golden_algorithm(&cats).map(|g| g.category)
    }
}

/// Solver input for one slot of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub slot: usize,
    pub samples: usize,
    pub narrative: Option<NarrativeVariant>,
    /// Replacement statement (paraphrase arms).
    pub statement: Option<String>,
    /// Category the solver was steered towards, for agreement.
    pub intended: Option<Category>,
}

pub fn arm_slots(arm: &Arm, cfg: &RunConfig, problem_id: &str, narr: &ProblemNarratives) -> Vec<Slot> {
    let narrative = |v: &NarrativeVariant| if arm.no_io { strip_example_io(v) } else { v.clone() };
    match arm.input {
        ArmInput::Problem => vec![Slot {
            slot: 0,
            samples: cfg.samples_per_strategy,
            narrative: None,
            statement: None,
            intended: narr.majority_category(),
        }],
        ArmInput::Variants(source) => narr
            .valid(source)
            .into_iter()
            .map(|v| Slot {
                slot: v.variant_index,
                samples: cfg.samples_per_variant,
                narrative: Some(narrative(v)),
                statement: None,
                intended: if source.include_tags() { v.algorithm_category } else { None },
            })
            .collect(),
        ArmInput::Permuted => {
            let pool: Vec<NarrativeVariant> = narr.valid(NarrSource::Tagged).into_iter().cloned().collect();
            match permute_variants(&pool, derive_seed(cfg.seeds.permutation, problem_id)) {
                Ok(permuted) => permuted
                    .iter()
                    .map(|p| Slot {
                        slot: p.narrative.variant_index,
                        samples: cfg.samples_per_variant,
                        narrative: Some(narrative(&p.narrative)),
                        statement: None,
                        intended: None,
                    })
                    .collect(),
                Err(_) => Vec::new(),
            }
        }
        ArmInput::Paraphrases => narr
            .paraphrases
            .iter()
            .map(|(j, text)| Slot {
                slot: *j,
                samples: cfg.samples_per_variant,
                narrative: None,
                statement: Some(text.clone()),
                intended: None,
            })
            .collect(),
        ArmInput::ParaphraseConcat => {
            let texts: Vec<String> = narr.paraphrases.iter().map(|(_, t)| t.clone()).collect();
            match concat_paraphrases(&texts, cfg.paraphrase_count) {
                Ok(joined) => vec![Slot {
                    slot: 0,
                    samples: cfg.samples_per_strategy,
                    narrative: None,
                    statement: Some(joined),
                    intended: narr.majority_category(),
                }],
                Err(_) => Vec::new(),
            }
        }
    }
}

/// Solver prompt for one slot. Paraphrase statements already contain the
/// examples, so the problem's own are dropped there.
pub fn solve_prompt(book: &PromptBook, arm: &Arm, problem: &Problem, slot: &Slot) -> Result<String, PromptError> {
    let mut p = if arm.no_io || slot.statement.is_some() {
        strip_examples(problem)
    } else {
        problem.clone()
    };
    if let Some(s) = &slot.statement {
        p = p.with_statement(s.clone());
    }
    book.build_solver_prompt(&arm.strategy, &p, slot.narrative.as_ref())
}
