//! Benchmark problems: loading line-delimited JSON dumps and the evaluation-set
//! filters (length and rating bounds, example presence, id allowlists, and the
//! seeded long-statement subset).
//!
//! Record schema (one JSON object per line):
//!
//! | field                | type                                   | notes                                   |
//! |----------------------|----------------------------------------|-----------------------------------------|
//! | `id`                 | string                                 | required                                |
//! | `statement`          | string                                 | required, examples kept out of it       |
//! | `io_mode`            | `"function_completion"` / `"stdin_stdout"` | required                           |
//! | `function_signature` | string                                 | required for `function_completion`      |
//! | `examples`           | list of `{input, output}`              | default empty                           |
//! | `hidden_tests`       | list of `{input, output}`              | default empty                           |
//! | `rating`             | integer                                | optional                                |
//! | `source`             | `"human_eval"` / `"live_code_bench"` / `"code_forces"` / `"custom"` | optional, must match the loader's source |
//! | `checker`            | string (Python program)                | optional custom judge                   |
//!
//! Unknown fields are kept in [`Problem::extra`] and written back by
//! [`write_problems`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("insufficient pool: needed {needed}, available {available}")]
    InsufficientPool { needed: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoMode {
    FunctionCompletion,
    StdinStdout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    HumanEval,
    LiveCodeBench,
    CodeForces,
    Custom,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::HumanEval => "human_eval",
            Source::LiveCodeBench => "live_code_bench",
            Source::CodeForces => "code_forces",
            Source::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "human_eval" | "humaneval" => Ok(Source::HumanEval),
            "live_code_bench" | "livecodebench" | "lcb" => Ok(Source::LiveCodeBench),
            "code_forces" | "codeforces" | "cf" => Ok(Source::CodeForces),
            "custom" => Ok(Source::Custom),
            other => Err(format!("unknown benchmark source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub output: String,
}

impl TestCase {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
        }
    }
}

/// One benchmark task.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub io_mode: IoMode,
    pub function_signature: Option<String>,
    pub examples: Vec<TestCase>,
    pub hidden_tests: Vec<TestCase>,
    pub rating: Option<u32>,
    /// Character count of `statement`.
    pub statement_length: usize,
    pub source: Source,
    /// Optional judge program; see the sandbox module for its protocol.
    pub checker: Option<String>,
    pub extra: BTreeMap<String, Value>,
}

impl Problem {
    pub fn new(id: impl Into<String>, statement: impl Into<String>, io_mode: IoMode, source: Source) -> Self {
        let statement = statement.into();
        Self {
            id: id.into(),
            statement_length: statement.chars().count(),
            statement,
            io_mode,
            function_signature: None,
            examples: Vec::new(),
            hidden_tests: Vec::new(),
            rating: None,
            source,
            checker: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_signature(mut self, signature: impl Into<String>) -> Self {
        self.function_signature = Some(signature.into());
        self
    }

    pub fn with_examples(mut self, examples: Vec<TestCase>) -> Self {
        self.examples = examples;
        self
    }

    pub fn with_hidden_tests(mut self, tests: Vec<TestCase>) -> Self {
        self.hidden_tests = tests;
        self
    }

    pub fn with_rating(mut self, rating: u32) -> Self {
        self.rating = Some(rating);
        self
    }

    /// Copy of this problem with a replaced statement; the length is recomputed.
    pub fn with_statement(&self, statement: impl Into<String>) -> Self {
        let mut p = self.clone();
        p.statement = statement.into();
        p.statement_length = p.statement.chars().count();
        p
    }

    /// Every judged case: public examples first, then hidden tests.
    pub fn all_tests(&self) -> impl Iterator<Item = &TestCase> {
        self.examples.iter().chain(self.hidden_tests.iter())
    }

    /// Function under test: the `entry_point` extra field when present,
    /// otherwise the last `def` in `function_signature` (helpers come first).
    pub fn entry_point(&self) -> Option<&str> {
        if let Some(Value::String(name)) = self.extra.get("entry_point") {
            return Some(name);
        }
        let sig = self.function_signature.as_deref()?;
        sig.rmatch_indices("def ").find_map(|(at, _)| {
            let rest = sig[at + 4..].trim_start();
            let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_'))?;
            let name = &rest[..end];
            (!name.is_empty() && rest[end..].trim_start().starts_with('(')).then_some(name)
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemRecord {
    id: String,
    statement: String,
    io_mode: IoMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    function_signature: Option<String>,
    #[serde(default)]
    examples: Vec<TestCase>,
    #[serde(default)]
    hidden_tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rating: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    checker: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Problems read from a dump plus every record that failed to parse.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub problems: Vec<Problem>,
    /// `(line, reason)` for each rejected record, 1-based lines.
    pub malformed: Vec<(usize, String)>,
}

/// Reads one problem per non-blank line. Any malformed record is an error,
/// reported for the first offending line.
pub fn load_problems(path: &Path, source: Source) -> Result<Vec<Problem>, DatasetError> {
    let report = load_problems_report(path, source)?;
    match report.malformed.into_iter().next() {
        Some((line, reason)) => Err(DatasetError::MalformedRecord { line, reason }),
        None => Ok(report.problems),
    }
}

/// Like [`load_problems`] but keeps going past malformed records.
pub fn load_problems_report(path: &Path, source: Source) -> Result<LoadReport, DatasetError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::FileNotFound(path.to_path_buf()),
        _ => DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut report = LoadReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, idx + 1, source) {
            Ok(p) => report.problems.push(p),
            Err(DatasetError::MalformedRecord { line, reason }) => report.malformed.push((line, reason)),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

fn parse_record(line: &str, line_no: usize, source: Source) -> Result<Problem, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedRecord {
        line: line_no,
        reason,
    };
    let record: ProblemRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if let Some(declared) = record.source {
        if declared != source {
            return Err(malformed(format!(
                "record source `{}` does not match loader source `{}`",
                declared.as_str(),
                source.as_str()
            )));
        }
    }
    if record.io_mode == IoMode::FunctionCompletion && record.function_signature.is_none() {
        return Err(malformed("function_completion record without function_signature".into()));
    }
    let mut problem = Problem::new(record.id, record.statement, record.io_mode, source);
    problem.function_signature = record.function_signature;
    problem.examples = record.examples;
    problem.hidden_tests = record.hidden_tests;
    problem.rating = record.rating;
    problem.checker = record.checker;
    problem.extra = record.extra;
    Ok(problem)
}

pub fn write_problems(path: &Path, problems: &[Problem]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in problems {
        let record = ProblemRecord {
            id: p.id.clone(),
            statement: p.statement.clone(),
            io_mode: p.io_mode,
            function_signature: p.function_signature.clone(),
            examples: p.examples.clone(),
            hidden_tests: p.hidden_tests.clone(),
            rating: p.rating,
            source: Some(p.source),
            checker: p.checker.clone(),
            extra: p.extra.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Predicates applied by [`apply_filter`]. Absent fields are not checked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFilterSpec {
    /// Inclusive upper bound on statement characters.
    #[serde(default)]
    pub max_length: Option<usize>,
    /// Inclusive lower bound on rating; unrated problems fail it.
    #[serde(default)]
    pub min_rating: Option<u32>,
    #[serde(default)]
    pub require_examples: bool,
    #[serde(default)]
    pub id_allowlist: Option<Vec<String>>,
}

impl DatasetFilterSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_length == Some(0) {
            return Err("max_length must be at least 1".into());
        }
        Ok(())
    }

    pub fn accepts(&self, problem: &Problem) -> bool {
        self.accepts_ignoring_allowlist(problem)
            && self
                .id_allowlist
                .as_ref()
                .is_none_or(|ids| ids.iter().any(|id| *id == problem.id))
    }

    fn accepts_ignoring_allowlist(&self, problem: &Problem) -> bool {
        self.max_length.is_none_or(|m| problem.statement_length <= m)
            && self
                .min_rating
                .is_none_or(|r| problem.rating.is_some_and(|pr| pr >= r))
            && (!self.require_examples || !problem.examples.is_empty())
    }
}

pub fn apply_filter(problems: &[Problem], spec: &DatasetFilterSpec) -> Vec<Problem> {
    let allow: Option<HashSet<&str>> = spec
        .id_allowlist
        .as_ref()
        .map(|ids| ids.iter().map(String::as_str).collect());
    problems
        .iter()
        .filter(|p| {
            spec.accepts_ignoring_allowlist(p) && allow.as_ref().is_none_or(|a| a.contains(p.id.as_str()))
        })
        .cloned()
        .collect()
}

/// Draws `count` problems whose statement is strictly longer than
/// `min_length_exclusive`. The draw uses ChaCha8 seeded with `seed`; the
/// result keeps the pool's original order.
pub fn sample_long_subset(
    problems: &[Problem],
    min_length_exclusive: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Problem>, DatasetError> {
    let qualifying: Vec<&Problem> = problems
        .iter()
        .filter(|p| p.statement_length > min_length_exclusive)
        .collect();
    if count > qualifying.len() {
        return Err(DatasetError::InsufficientPool {
            needed: count,
            available: qualifying.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, qualifying.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| qualifying[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stdin_problem(id: &str, len: usize) -> Problem {
        Problem::new(id, "x".repeat(len), IoMode::StdinStdout, Source::CodeForces)
            .with_examples(vec![TestCase::new("1", "1")])
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_loads_nothing() {
        let f = write_tmp("");
        assert!(load_problems(f.path(), Source::Custom).unwrap().is_empty());
    }

    #[test]
    fn missing_file() {
        let err = load_problems(Path::new("/nonexistent/problems.jsonl"), Source::Custom).unwrap_err();
        assert!(matches!(err, DatasetError::FileNotFound(_)));
    }

    #[test]
    fn missing_statement_names_line() {
        let f = write_tmp(concat!(
            r#"{"id":"a","statement":"s","io_mode":"stdin_stdout"}"#,
            "\n",
            r#"{"id":"b","io_mode":"stdin_stdout"}"#,
            "\n"
        ));
        match load_problems(f.path(), Source::Custom).unwrap_err() {
            DatasetError::MalformedRecord { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("statement"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_collects_every_malformed_line() {
        let f = write_tmp(concat!(
            "not json\n",
            r#"{"id":"a","statement":"s","io_mode":"stdin_stdout"}"#,
            "\n\n",
            r#"{"id":"b"}"#,
            "\n"
        ));
        let report = load_problems_report(f.path(), Source::Custom).unwrap();
        assert_eq!(report.problems.len(), 1);
        let lines: Vec<_> = report.malformed.iter().map(|(l, _)| *l).collect();
        assert_eq!(lines, [1, 4]);
    }

    #[test]
    fn function_completion_requires_signature() {
        let f = write_tmp(r#"{"id":"a","statement":"s","io_mode":"function_completion"}"#);
        assert!(matches!(
            load_problems(f.path(), Source::HumanEval),
            Err(DatasetError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn source_mismatch_is_malformed() {
        let f = write_tmp(r#"{"id":"a","statement":"s","io_mode":"stdin_stdout","source":"human_eval"}"#);
        assert!(load_problems(f.path(), Source::CodeForces).is_err());
    }

    #[test]
    fn unknown_fields_round_trip() {
        let f = write_tmp(r#"{"id":"a","statement":"héllo","io_mode":"stdin_stdout","contest":"1234","tags":["dp"]}"#);
        let problems = load_problems(f.path(), Source::CodeForces).unwrap();
        assert_eq!(problems[0].statement_length, 5);
        assert_eq!(problems[0].extra["contest"], Value::from("1234"));

        let out = tempfile::NamedTempFile::new().unwrap();
        write_problems(out.path(), &problems).unwrap();
        let again = load_problems(out.path(), Source::CodeForces).unwrap();
        assert_eq!(again, problems);
    }

    #[test]
    fn entry_point_parsing() {
        let p = Problem::new("a", "s", IoMode::FunctionCompletion, Source::HumanEval)
            .with_signature("def has_close_elements(numbers: List[float], threshold: float) -> bool:");
        assert_eq!(p.entry_point(), Some("has_close_elements"));
        let q = p.clone().with_signature("lambda x: x");
        assert_eq!(q.entry_point(), None);
        let helper = p.clone().with_signature("def is_pal(s):\n    return s == s[::-1]\n\ndef make_pal(s: str) -> str:\n");
        assert_eq!(helper.entry_point(), Some("make_pal"));
        let mut named = helper;
        named.extra.insert("entry_point".into(), Value::String("is_pal".into()));
        assert_eq!(named.entry_point(), Some("is_pal"));
    }

    #[test]
    fn identity_filter() {
        let ps = vec![stdin_problem("a", 10), stdin_problem("b", 2000)];
        assert_eq!(apply_filter(&ps, &DatasetFilterSpec::default()), ps);
    }

    #[test]
    fn max_length_is_inclusive() {
        let ps = vec![stdin_problem("a", 800), stdin_problem("b", 1000), stdin_problem("c", 1001)];
        let spec = DatasetFilterSpec {
            max_length: Some(1000),
            ..Default::default()
        };
        let ids: Vec<_> = apply_filter(&ps, &spec).into_iter().map(|p| p.id).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn rating_and_examples_predicates() {
        let mut unrated = stdin_problem("unrated", 10);
        unrated.rating = None;
        let mut no_examples = stdin_problem("bare", 10).with_rating(2400);
        no_examples.examples.clear();
        let ps = vec![
            stdin_problem("easy", 10).with_rating(1999),
            stdin_problem("hard", 10).with_rating(2000),
            unrated,
            no_examples,
        ];
        let spec = DatasetFilterSpec {
            min_rating: Some(2000),
            require_examples: true,
            ..Default::default()
        };
        let ids: Vec<_> = apply_filter(&ps, &spec).into_iter().map(|p| p.id).collect();
        assert_eq!(ids, ["hard"]);
    }

    #[test]
    fn allowlist_keeps_input_order() {
        let ps = vec![stdin_problem("a", 1), stdin_problem("b", 1), stdin_problem("c", 1)];
        let spec = DatasetFilterSpec {
            id_allowlist: Some(vec!["c".into(), "a".into()]),
            ..Default::default()
        };
        let ids: Vec<_> = apply_filter(&ps, &spec).into_iter().map(|p| p.id).collect();
        assert_eq!(ids, ["a", "c"]);
    }

    #[test]
    fn long_subset_exhaustive_and_deterministic() {
        let ps: Vec<_> = (0..8).map(|i| stdin_problem(&format!("p{i}"), 995 + i)).collect();
        // lengths 995..=1002, five of them above 997
        let all = sample_long_subset(&ps, 997, 5, 7).unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.iter().all(|p| p.statement_length > 997));
        let a = sample_long_subset(&ps, 997, 3, 42).unwrap();
        let b = sample_long_subset(&ps, 997, 3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn long_subset_insufficient() {
        let ps = vec![stdin_problem("a", 1001), stdin_problem("b", 1000)];
        match sample_long_subset(&ps, 1000, 2, 0) {
            Err(DatasetError::InsufficientPool { needed, available }) => {
                assert_eq!((needed, available), (2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
