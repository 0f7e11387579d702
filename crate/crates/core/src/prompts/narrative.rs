//! The five-section narrative format and its validity filter.
//!
//! A generator reply is split on section headers found at line starts
//! (case-insensitive, tolerating `-`, `*`, `#`, numbering and bold markers in
//! front of the header). Validity is decided in a fixed order:
//!
//! 1. `TooShort` when the reply has fewer than [`MIN_TOKENS`] whitespace tokens;
//! 2. `DegenerateRepetition` when it has more than 99% of the generation limit;
//! 3. `MissingComponents` when task overview, constraints or example I/O is
//!    absent or empty;
//! 4. `Valid` otherwise.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Replies with fewer whitespace tokens than this are `TooShort`.
pub const MIN_TOKENS: usize = 50;
/// Fraction of the generation limit above which a reply is `DegenerateRepetition`.
pub const DEGENERATE_FRACTION: f64 = 0.99;

/// The eight algorithm categories, in the order the transformation
/// guidelines list them. That order is also the tie-break order used by
/// golden-algorithm voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    GraphAlgorithms,
    DynamicProgramming,
    GreedyAlgorithms,
    SortingAndSearching,
    StringAlgorithms,
    DataStructures,
    MathematicsAndNumberTheory,
    SimulationAndImplementation,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::GraphAlgorithms,
        Category::DynamicProgramming,
        Category::GreedyAlgorithms,
        Category::SortingAndSearching,
        Category::StringAlgorithms,
        Category::DataStructures,
        Category::MathematicsAndNumberTheory,
        Category::SimulationAndImplementation,
    ];

    /// Position in [`Category::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::GraphAlgorithms => "Graph Algorithms",
            Category::DynamicProgramming => "Dynamic Programming",
            Category::GreedyAlgorithms => "Greedy Algorithms",
            Category::SortingAndSearching => "Sorting and Searching",
            Category::StringAlgorithms => "String Algorithms",
            Category::DataStructures => "Data Structures",
            Category::MathematicsAndNumberTheory => "Mathematics and Number Theory",
            Category::SimulationAndImplementation => "Simulation and Implementation",
        }
    }

    /// Exact name match after case folding, `&` -> `and`, and dropping
    /// punctuation around the words.
    pub fn parse_exact(s: &str) -> Option<Category> {
        let norm = normalize_words(s);
        Category::ALL.into_iter().find(|c| normalize_words(c.name()) == norm)
    }

    /// The single category named inside free text; `None` when zero or
    /// several different categories are mentioned.
    pub fn find_unique_in(s: &str) -> Option<Category> {
        let norm = format!(" {} ", normalize_words(s));
        let mut found = Category::ALL
            .into_iter()
            .filter(|c| norm.contains(&format!(" {} ", normalize_words(c.name()))));
        let first = found.next()?;
        found.next().is_none().then_some(first)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_words(s: &str) -> String {
    s.replace('&', " and ")
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    TooShort,
    DegenerateRepetition,
    MissingComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    AlgorithmCategory,
    NarrativeGenre,
    TaskOverview,
    Constraints,
    ExampleIo,
}

const HEADERS: &[(&str, Section)] = &[
    ("algorithm category", Section::AlgorithmCategory),
    ("narrative genre", Section::NarrativeGenre),
    ("task overview", Section::TaskOverview),
    ("constraints", Section::Constraints),
    ("example input/output", Section::ExampleIo),
    ("example input / output", Section::ExampleIo),
    ("example input and output", Section::ExampleIo),
    ("examples input/output", Section::ExampleIo),
    ("example i/o", Section::ExampleIo),
];

/// One parsed reformulation of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeVariant {
    pub problem_id: String,
    /// 1-based variant number.
    pub variant_index: usize,
    pub algorithm_category: Option<Category>,
    pub genre: Option<String>,
    pub task_overview: String,
    pub constraints: String,
    pub example_io: String,
    pub raw_output: String,
    pub validity: Validity,
    /// Set by [`super::strip_example_io`]; the variant is usable for solving
    /// even though its example section is empty.
    #[serde(default)]
    pub example_io_stripped: bool,
}

impl NarrativeVariant {
    pub fn parse(
        problem_id: impl Into<String>,
        variant_index: usize,
        raw: &str,
        max_generation_tokens: usize,
        include_tags: bool,
    ) -> Self {
        let mut v = parse_narrative(raw, max_generation_tokens, include_tags);
        v.problem_id = problem_id.into();
        v.variant_index = variant_index;
        v
    }

    pub fn is_valid(&self) -> bool {
        self.validity == Validity::Valid
    }

    /// Usable as solver input: valid, or deliberately stripped for the
    /// example-I/O ablation.
    pub fn is_solvable(&self) -> bool {
        self.is_valid() || self.example_io_stripped
    }

    /// The three narrative sections, as shown to the solver.
    pub fn body(&self) -> String {
        let mut out = format!("- Task Overview: {}\n\n- Constraints: {}", self.task_overview, self.constraints);
        if !self.example_io.is_empty() {
            out.push_str("\n\n- Example Input/Output: ");
            out.push_str(&self.example_io);
        }
        out
    }

    /// Full five-section text; tag sections are emitted only when present.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        if let Some(c) = self.algorithm_category {
            out.push_str(&format!("- Algorithm Category: {c}\n\n"));
        }
        if let Some(g) = &self.genre {
            out.push_str(&format!("- Narrative Genre: {g}\n\n"));
        }
        out.push_str(&format!(
            "- Task Overview: {}\n\n- Constraints: {}\n\n- Example Input/Output: {}",
            self.task_overview, self.constraints, self.example_io
        ));
        out
    }
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn classify(raw: &str, max_generation_tokens: usize, sections_complete: bool) -> Validity {
    debug_assert!(max_generation_tokens > 0);
    let tokens = count_tokens(raw);
    if tokens < MIN_TOKENS {
        Validity::TooShort
    } else if tokens as f64 > DEGENERATE_FRACTION * max_generation_tokens as f64 {
        Validity::DegenerateRepetition
    } else if !sections_complete {
        Validity::MissingComponents
    } else {
        Validity::Valid
    }
}

/// Splits a generator reply into sections and assigns validity. The
/// returned variant has an empty `problem_id` and index 0; see
/// [`NarrativeVariant::parse`].
pub fn parse_narrative(raw: &str, max_generation_tokens: usize, include_tags: bool) -> NarrativeVariant {
    let mut sections: [Option<String>; 5] = Default::default();
    let mut current: Option<(Section, Vec<&str>)> = None;

    let flush = |current: &mut Option<(Section, Vec<&str>)>, sections: &mut [Option<String>; 5]| {
        if let Some((sec, lines)) = current.take() {
            let slot = &mut sections[sec as usize];
            if slot.is_none() {
                *slot = Some(lines.join("\n").trim().to_string());
            }
        }
    };

    for line in raw.lines() {
        if let Some((sec, rest)) = match_header(line) {
            flush(&mut current, &mut sections);
            current = Some((sec, vec![rest]));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(&mut current, &mut sections);

    let [category, genre, overview, constraints, example_io] = sections;
    let task_overview = overview.unwrap_or_default();
    let constraints = constraints.unwrap_or_default();
    let example_io = example_io.unwrap_or_default();
    let complete = !task_overview.is_empty() && !constraints.is_empty() && !example_io.is_empty();

    NarrativeVariant {
        problem_id: String::new(),
        variant_index: 0,
        algorithm_category: if include_tags {
            category.as_deref().and_then(Category::parse_exact)
        } else {
            None
        },
        genre: if include_tags { genre.filter(|g| !g.is_empty()) } else { None },
        task_overview,
        constraints,
        example_io,
        raw_output: raw.to_string(),
        validity: classify(raw, max_generation_tokens.max(1), complete),
        example_io_stripped: false,
    }
}

/// Recognizes a section header at the start of `line` and returns the rest
/// of the line after the colon.
fn match_header(line: &str) -> Option<(Section, &str)> {
    let mut s = line.trim_start();
    loop {
        let before = s.len();
        s = s.trim_start_matches(['-', '*', '#', '•', '>', '_']).trim_start();
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 && s[digits..].starts_with(['.', ')']) {
            s = s[digits + 1..].trim_start();
        }
        if s.len() == before {
            break;
        }
    }
    let lower = s.to_lowercase();
    for (name, section) in HEADERS {
        if !lower.starts_with(name) {
            continue;
        }
        // `to_lowercase` keeps byte lengths for the ASCII header names
        let after = s.get(name.len()..)?;
        let after = after.trim_start_matches(['*', '_', ' ']);
        if let Some(rest) = after.strip_prefix(':') {
            return Some((*section, rest.trim_start_matches(['*', '_']).trim_start()));
        }
    }
    None
}
