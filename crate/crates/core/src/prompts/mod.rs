//! Prompt construction for every strategy, narrative parsing, and the
//! ablation variants (permuted sections, misaligned genres, no-tag
//! narratives, paraphrases, example-I/O stripping).

mod narrative;
mod template;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{IoMode, Problem};

pub use narrative::{
    classify, count_tokens, parse_narrative, Category, NarrativeVariant, Validity, DEGENERATE_FRACTION, MIN_TOKENS,
};
pub use template::{render, TemplateRegistry};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("strategy {strategy} {reason}")]
    StrategyNarrativeMismatch { strategy: StrategyKind, reason: String },
    #[error("insufficient variants: needed {needed}, available {available}")]
    InsufficientVariants { needed: usize, available: usize },
    #[error("misaligned genre set must hold 20 genres, got {0}")]
    GenreSetSize(usize),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` has no value for placeholder `{name}`")]
    MissingPlaceholder { template: String, name: String },
    #[error("template directory: {0}")]
    TemplateDir(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    RepeatedSampling,
    CoT,
    SCoT,
    NarrativeOnly,
    NarrativeConcat,
    NoTagNarrative,
    Permuted,
    Misaligned,
    Paraphrase,
    ParaphraseConcat,
    ExternalTemplate,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 11] = [
        StrategyKind::RepeatedSampling,
        StrategyKind::CoT,
        StrategyKind::SCoT,
        StrategyKind::NarrativeOnly,
        StrategyKind::NarrativeConcat,
        StrategyKind::NoTagNarrative,
        StrategyKind::Permuted,
        StrategyKind::Misaligned,
        StrategyKind::Paraphrase,
        StrategyKind::ParaphraseConcat,
        StrategyKind::ExternalTemplate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::RepeatedSampling => "RS",
            StrategyKind::CoT => "CoT",
            StrategyKind::SCoT => "SCoT",
            StrategyKind::NarrativeOnly => "NarrOnly",
            StrategyKind::NarrativeConcat => "NarrConcat",
            StrategyKind::NoTagNarrative => "NoTag",
            StrategyKind::Permuted => "Permuted",
            StrategyKind::Misaligned => "Misaligned",
            StrategyKind::Paraphrase => "Para",
            StrategyKind::ParaphraseConcat => "PC",
            StrategyKind::ExternalTemplate => "External",
        }
    }

    pub fn default_template(self) -> &'static str {
        match self {
            StrategyKind::RepeatedSampling | StrategyKind::Paraphrase | StrategyKind::ParaphraseConcat => "solve_rs",
            StrategyKind::CoT => "solve_cot",
            StrategyKind::SCoT => "solve_scot",
            StrategyKind::NarrativeOnly
            | StrategyKind::NoTagNarrative
            | StrategyKind::Permuted
            | StrategyKind::Misaligned => "solve_narrative",
            StrategyKind::NarrativeConcat => "solve_narrative_concat",
            StrategyKind::ExternalTemplate => "solve_external",
        }
    }

    /// Whether solver prompts for this kind are built from a narrative.
    pub fn needs_narrative(self) -> bool {
        matches!(
            self,
            StrategyKind::NarrativeOnly
                | StrategyKind::NarrativeConcat
                | StrategyKind::Permuted
                | StrategyKind::Misaligned
                | StrategyKind::NoTagNarrative
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.label().to_ascii_lowercase() == norm || format!("{k:?}").to_ascii_lowercase() == norm)
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

/// A named recipe mapping a problem (and maybe a narrative) to a solver prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub kind: StrategyKind,
    pub template_id: String,
}

impl PromptStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            template_id: kind.default_template().to_string(),
        }
    }

    pub fn external(template_id: impl Into<String>) -> Self {
        Self {
            kind: StrategyKind::ExternalTemplate,
            template_id: template_id.into(),
        }
    }

    /// Short name used in record keys and reports.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::ExternalTemplate if self.template_id != StrategyKind::ExternalTemplate.default_template() => {
                format!("External:{}", self.template_id)
            }
            kind => kind.label().to_string(),
        }
    }
}

impl FromStr for PromptStrategy {
    type Err = PromptError;

    /// Accepts a kind name (`RS`, `NarrativeConcat`, ...) or
    /// `External:<template_id>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((head, id)) = s.split_once(':') {
            if head.parse::<StrategyKind>()? == StrategyKind::ExternalTemplate && !id.is_empty() {
                return Ok(PromptStrategy::external(id));
            }
            return Err(PromptError::UnknownStrategy(s.to_string()));
        }
        s.parse().map(PromptStrategy::new)
    }
}

/// Problem statement followed by its public examples, as the transformation
/// and plain solver prompts present it.
pub fn render_problem(problem: &Problem) -> String {
    let mut out = problem.statement.trim_end().to_string();
    if !problem.examples.is_empty() {
        out.push_str("\n\nExamples:\n");
        for (i, ex) in problem.examples.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("Input:\n{}\nOutput:\n{}\n", ex.input.trim_end(), ex.output.trim_end()));
        }
    }
    out
}

/// Language and I/O contract appended to every solver prompt.
pub fn io_instructions(problem: &Problem) -> String {
    match (problem.io_mode, problem.function_signature.as_deref()) {
        (IoMode::FunctionCompletion, Some(sig)) => format!(
            "Write a Python 3 implementation of the function with this signature:\n{sig}\n\
             Return the complete function (with any imports and helpers it needs) in a single ```python code block."
        ),
        _ => "Write a complete Python 3 program that reads from standard input and writes to standard output.\n\
              Return the program in a single ```python code block."
            .to_string(),
    }
}

/// Builds every prompt from one template registry.
#[derive(Debug, Clone, Default)]
pub struct PromptBook {
    pub templates: TemplateRegistry,
}

impl PromptBook {
    pub fn new(templates: TemplateRegistry) -> Self {
        Self { templates }
    }

    /// Checks that each strategy's template is registered.
    pub fn check_strategies<'a>(&self, strategies: impl IntoIterator<Item = &'a PromptStrategy>) -> Result<(), PromptError> {
        for s in strategies {
            self.templates.get(&s.template_id)?;
        }
        Ok(())
    }

    pub fn build_transformation_prompt(&self, problem: &Problem, include_tags: bool) -> Result<String, PromptError> {
        let id = if include_tags { "transform" } else { "transform_notag" };
        self.templates.render(id, &[("statement", &render_problem(problem))])
    }

    pub fn build_solver_prompt(
        &self,
        strategy: &PromptStrategy,
        problem: &Problem,
        narrative: Option<&NarrativeVariant>,
    ) -> Result<String, PromptError> {
        let mismatch = |reason: &str| PromptError::StrategyNarrativeMismatch {
            strategy: strategy.kind,
            reason: reason.to_string(),
        };
        let narrative_body = match (strategy.kind.needs_narrative(), narrative) {
            (true, None) => return Err(mismatch("requires a narrative")),
            (true, Some(n)) if !n.is_solvable() => return Err(mismatch("requires a valid narrative")),
            (true, Some(n)) => Some(n.body()),
            (false, Some(_)) => return Err(mismatch("does not take a narrative")),
            (false, None) => None,
        };
        let problem_text = render_problem(problem);
        let io = io_instructions(problem);
        let narrative_text = narrative_body.unwrap_or_default();
        self.templates.render(
            &strategy.template_id,
            &[
                ("problem", &problem_text),
                ("statement", &problem_text),
                ("narrative", &narrative_text),
                ("io_instructions", &io),
            ],
        )
    }

    /// Transformation prompt with a genre drawn from `genre_set`; returns the
    /// prompt and the injected genre.
    pub fn build_misaligned_prompt(
        &self,
        problem: &Problem,
        genre_set: &MisalignedGenreSet,
        seed: u64,
    ) -> Result<(String, String), PromptError> {
        let genre = genre_set.draw(seed).to_string();
        let prompt = self
            .templates
            .render("transform_misaligned", &[("statement", &render_problem(problem)), ("genre", &genre)])?;
        Ok((prompt, genre))
    }

    pub fn build_paraphrase_prompt(&self, problem: &Problem) -> Result<String, PromptError> {
        self.templates.render("paraphrase", &[("statement", &render_problem(problem))])
    }

    pub fn build_backtranslation_prompt(&self, code: &str, retry: bool) -> Result<String, PromptError> {
        let id = if retry { "backtranslate_retry" } else { "backtranslate" };
        self.templates.render(id, &[("code", code)])
    }
}

/// Parses a back-translation reply: exact category name on the reply (or on
/// its last non-empty line), else the only category mentioned anywhere.
pub fn parse_backtranslation(reply: &str) -> Option<Category> {
    let trimmed = reply.trim();
    Category::parse_exact(trimmed)
        .or_else(|| trimmed.lines().rev().find(|l| !l.trim().is_empty()).and_then(Category::parse_exact))
        .or_else(|| Category::find_unique_in(trimmed))
}

/// A narrative assembled from the sections of three distinct variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutedNarrative {
    pub narrative: NarrativeVariant,
    /// Variant indices supplying task overview, constraints and example I/O.
    pub sources: [usize; 3],
}

/// For each valid input variant, draws an ordered triple of distinct valid
/// variants uniformly and splices their task overview, constraints and
/// example I/O together. The output has one entry per valid input, in input
/// order; the splice keeps the task-overview source's category and genre.
pub fn permute_variants(variants: &[NarrativeVariant], seed: u64) -> Result<Vec<PermutedNarrative>, PromptError> {
    let pool: Vec<&NarrativeVariant> = variants.iter().filter(|v| v.is_valid()).collect();
    let n = pool.len();
    if n < 3 {
        return Err(PromptError::InsufficientVariants {
            needed: 3,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples = n * (n - 1) * (n - 2);
    Ok(pool
        .iter()
        .map(|slot| {
            let [a, b, c] = decode_triple(rng.random_range(0..triples), n);
            let (to, cs, ex) = (pool[a], pool[b], pool[c]);
            PermutedNarrative {
                narrative: NarrativeVariant {
                    problem_id: slot.problem_id.clone(),
                    variant_index: slot.variant_index,
                    algorithm_category: to.algorithm_category,
                    genre: to.genre.clone(),
                    task_overview: to.task_overview.clone(),
                    constraints: cs.constraints.clone(),
                    example_io: ex.example_io.clone(),
                    raw_output: String::new(),
                    validity: Validity::Valid,
                    example_io_stripped: false,
                },
                sources: [to.variant_index, cs.variant_index, ex.variant_index],
            }
        })
        .collect())
}

/// Maps `0..n(n-1)(n-2)` onto ordered triples of distinct positions.
fn decode_triple(code: usize, n: usize) -> [usize; 3] {
    let first = code / ((n - 1) * (n - 2));
    let rem = code % ((n - 1) * (n - 2));
    let second_rank = rem / (n - 2);
    let third_rank = rem % (n - 2);
    let second = if second_rank >= first { second_rank + 1 } else { second_rank };
    let (lo, hi) = if first < second { (first, second) } else { (second, first) };
    let mut third = third_rank;
    if third >= lo {
        third += 1;
    }
    if third >= hi {
        third += 1;
    }
    [first, second, third]
}

/// Genres deliberately incongruent with programming tasks, in four groups
/// of administrative, legal, media and funerary documents.
pub const MISALIGNED_GENRES: [(&str, &[&str]); 4] = [
    (
        "Practical / Administrative Documents",
        &[
            "Hospital Intake Form",
            "Medical Prescription Form",
            "Personal Information Consent Form",
            "Insurance Claim Form",
            "Visa Application Form",
            "Tax Return Form",
        ],
    ),
    (
        "Legal / Public Records",
        &[
            "Court Transcript of an Extortion Case",
            "Heavy Machinery Operator License",
            "Military Service Exemption Certificate",
            "Divorce Decree",
            "Bank Loan Agreement",
        ],
    ),
    (
        "Industrial / Media Contexts",
        &[
            "Billboard Advertisement for a Toothbrush",
            "Radio Weather Forecast",
            "Model Agency Contract",
        ],
    ),
    (
        "Funerary / Ritual Records",
        &[
            "Funeral Service Program",
            "Memorial Tribute Writing",
            "Obituary Column",
            "Eulogy",
            "Gravestone Inscription",
            "Condolence Letter",
        ],
    ),
];

/// Exactly twenty genres, each tagged with its group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MisalignedGenreSet {
    genres: Vec<(String, String)>,
}

impl MisalignedGenreSet {
    pub const SIZE: usize = 20;

    /// `(group, genre)` pairs; anything but 20 entries is rejected.
    pub fn new(genres: Vec<(String, String)>) -> Result<Self, PromptError> {
        if genres.len() != Self::SIZE {
            return Err(PromptError::GenreSetSize(genres.len()));
        }
        Ok(Self { genres })
    }

    pub fn genres(&self) -> impl Iterator<Item = &str> {
        self.genres.iter().map(|(_, g)| g.as_str())
    }

    pub fn group_of(&self, genre: &str) -> Option<&str> {
        self.genres.iter().find(|(_, g)| g == genre).map(|(grp, _)| grp.as_str())
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.genres.get(index).map(|(_, g)| g.as_str())
    }

    /// Position drawn by `seed`; see [`Self::draw`].
    pub fn draw_index(seed: u64) -> usize {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..Self::SIZE)
    }

    pub fn draw(&self, seed: u64) -> &str {
        &self.genres[Self::draw_index(seed)].1
    }

    pub fn contains(&self, genre: &str) -> bool {
        self.genres.iter().any(|(_, g)| g.eq_ignore_ascii_case(genre.trim()))
    }
}

impl Default for MisalignedGenreSet {
    fn default() -> Self {
        let genres = MISALIGNED_GENRES
            .iter()
            .flat_map(|(group, gs)| gs.iter().map(move |g| (group.to_string(), g.to_string())))
            .collect();
        Self::new(genres).expect("shipped genre list has 20 entries")
    }
}

/// Separator placed between concatenated paraphrases.
pub const PARAPHRASE_SEPARATOR: &str = "\n\n---\n\n";

/// Joins the first `k` paraphrases, numbered, separated by [`PARAPHRASE_SEPARATOR`].
pub fn concat_paraphrases(paraphrases: &[String], k: usize) -> Result<String, PromptError> {
    if paraphrases.len() < k {
        return Err(PromptError::InsufficientVariants {
            needed: k,
            available: paraphrases.len(),
        });
    }
    Ok(paraphrases[..k]
        .iter()
        .enumerate()
        .map(|(i, p)| format!("### Version {}\n\n{}", i + 1, p.trim()))
        .collect::<Vec<_>>()
        .join(PARAPHRASE_SEPARATOR))
}

/// Copy with the example section emptied and flagged as the example-I/O
/// ablation, so it stays usable for solving.
pub fn strip_example_io(narrative: &NarrativeVariant) -> NarrativeVariant {
    let mut out = narrative.clone();
    out.example_io.clear();
    out.example_io_stripped = true;
    out
}

/// Copy without public examples (the repeated-sampling arm of the
/// example-I/O ablation). Hidden tests are untouched.
pub fn strip_examples(problem: &Problem) -> Problem {
    let mut out = problem.clone();
    out.examples.clear();
    out
}
