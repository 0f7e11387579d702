//! Shared fixtures: the scripted four-problem run, the validity corpus and
//! the sandbox corpus.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use narrative_harness::backend::{MockReply, MockRule, MockScript, RoleTag};
use narrative_harness::dataset::{write_problems, IoMode, Problem, Source, TestCase};
use narrative_harness::prompts::Validity;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------------------
// Scripted end-to-end run
//
// Four stdin/stdout problems, strategies RS + NarrOnly + NarrConcat, five
// tagged variants each, ten RS samples. Every mock rule keys on text that
// only one kind of prompt contains, so the outcome counts do not depend on
// call order or concurrency:
//
//   P1 (sum)     all five variants valid; every sample correct
//   P2 (reverse) variant 5 too short; RS 4 correct / 5 wrong / 1 without code
//   P3 (max)     RS all wrong; NarrOnly 2 of 5 correct; NarrConcat none
//   P4 (vowels)  no valid variant; RS 2 of 10 correct
// ---------------------------------------------------------------------------

const MATH: &str = "Mathematics and Number Theory";
const SIM: &str = "Simulation and Implementation";
const STRING: &str = "String Algorithms";
const DS: &str = "Data Structures";
const GREEDY: &str = "Greedy Algorithms";
const SORT: &str = "Sorting and Searching";

fn code(body: &str) -> String {
    format!("Here is my solution.\n\n```python\n{body}\n```\n")
}

/// `(marker, program, back-translation replies)`.
const CODES: &[(&str, &str, &[&str])] = &[
    ("P1-OK-A", "a, b = map(int, input().split())\nprint(a + b)", &[MATH]),
    ("P1-OK-B", "import sys\nprint(sum(map(int, sys.stdin.read().split())))", &[SIM]),
    ("P2-OK-A", "print(input()[::-1])", &[STRING]),
    (
        "P2-OK-B",
        "s = list(input())\nout = []\nwhile s:\n    out.append(s.pop())\nprint(''.join(out))",
        &[DS],
    ),
    ("P2-BAD-A", "print(input())", &[STRING]),
    ("P2-BAD-B", "print(input()[1:][::-1])", &[SIM]),
    ("P3-OK-A", "input()\nprint(max(map(int, input().split())))", &[SORT]),
    (
        "P3-OK-B",
        "input()\nbest = None\nfor v in map(int, input().split()):\n    if best is None or v > best:\n        best = v\nprint(best)",
        &[GREEDY],
    ),
    ("P3-BAD-A", "input()\nprint(min(map(int, input().split())))", &[SORT]),
    ("P3-BAD-B", "input()\nprint(sorted(map(int, input().split()))[0])", &[GREEDY]),
    // first reply names no category, the reprompt does
    ("P3-BAD-R", "input()\nprint(sum(map(int, input().split())))", &["It is hard to say.", GREEDY]),
    ("P4-OK", "print(sum(c in 'aeiou' for c in input()))", &[STRING]),
    ("P4-BAD", "print(len(input()))", &[GREEDY]),
];

fn reply(marker: &str) -> MockReply {
    if marker == "NOCODE" {
        return MockReply::Text("I am not able to solve this one.".into());
    }
    let (_, body, _) = CODES.iter().find(|(m, _, _)| *m == marker).expect("known marker");
    MockReply::Text(code(&format!("# {marker}\n{body}")))
}

fn words(tag: &str, n: usize) -> String {
    (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
}

fn tagged_variant(p: usize, j: usize, category: &str) -> String {
    format!(
        "- Algorithm Category: {category}\n- Narrative Genre: Saga {p}{j}\n- Task Overview: {} [OV-P{p}-{j}]\n\
         - Constraints: {}\n- Example Input/Output: {} [EX-P{p}-{j}]",
        words("story", 30),
        words("limit", 12),
        words("example", 12)
    )
}

/// `(problem, variant categories or None for invalid, NarrOnly codes, NarrConcat codes)`.
type VariantPlan = (usize, [Option<&'static str>; 5], [&'static str; 5], [&'static str; 5]);

const VARIANTS: [VariantPlan; 4] = [
    (
        1,
        [Some(MATH); 5],
        ["P1-OK-A", "P1-OK-A", "P1-OK-A", "P1-OK-A", "P1-OK-B"],
        ["P1-OK-A"; 5],
    ),
    (
        2,
        [Some(STRING), Some(STRING), Some(DS), Some(STRING), None],
        ["P2-OK-A", "P2-OK-B", "P2-BAD-A", "P2-OK-A", ""],
        ["P2-OK-A", "P2-BAD-B", "P2-OK-B", "P2-OK-A", ""],
    ),
    (
        3,
        [Some(GREEDY), Some(SORT), Some(SORT), Some(GREEDY), Some(SORT)],
        ["P3-OK-B", "P3-BAD-A", "P3-BAD-R", "P3-BAD-B", "P3-OK-A"],
        ["P3-BAD-B", "P3-BAD-A", "P3-BAD-A", "P3-BAD-B", "P3-BAD-B"],
    ),
    (4, [None; 5], [""; 5], [""; 5]),
];

const RS: [(usize, &[(&str, usize)]); 4] = [
    (1, &[("P1-OK-A", 7), ("P1-OK-B", 3)]),
    (2, &[("P2-OK-A", 3), ("P2-OK-B", 1), ("P2-BAD-A", 2), ("P2-BAD-B", 3), ("NOCODE", 1)]),
    (3, &[("P3-BAD-A", 6), ("P3-BAD-B", 4)]),
    (4, &[("P4-OK", 2), ("P4-BAD", 8)]),
];

pub fn e2e_problems() -> Vec<Problem> {
    let p = |id: &str, text: &str, ex: (&str, &str), hidden: &[(&str, &str)]| {
        Problem::new(id, format!("STATEMENT-{id}: {text}"), IoMode::StdinStdout, Source::Custom)
            .with_examples(vec![TestCase::new(ex.0, ex.1)])
            .with_hidden_tests(hidden.iter().map(|(i, o)| TestCase::new(*i, *o)).collect())
    };
    vec![
        p("P1", "Read two integers and print their sum.", ("1 2", "3"), &[("5 7", "12"), ("-1 1", "0")]),
        p("P2", "Read a line and print it reversed.", ("abc", "cba"), &[("hello", "olleh"), ("x", "x")]),
        p(
            "P3",
            "Read n and then n integers; print the largest.",
            ("3\n1 5 2", "5"),
            &[("4\n-1 -7 -3 -2", "-1"), ("1\n9", "9")],
        ),
        p("P4", "Read a word and print how many vowels it has.", ("hello", "2"), &[("sky", "0"), ("aeiou", "5")]),
    ]
}

pub fn e2e_script() -> MockScript {
    let mut script = MockScript::default();
    // narratives
    for (p, cats, _, _) in VARIANTS {
        let replies = (1..=5)
            .map(|j| {
                MockReply::Text(match cats[j - 1] {
                    Some(c) => tagged_variant(p, j, c),
                    // P2's fifth reply is too short, P4's lack the example section
                    None if p == 2 => format!("- Algorithm Category: {STRING}\n- Task Overview: short [OV-P{p}-{j}]"),
                    None => format!(
                        "- Algorithm Category: {GREEDY}\n- Narrative Genre: Saga\n- Task Overview: {}\n- Constraints: {}",
                        words("story", 40),
                        words("limit", 20)
                    ),
                })
            })
            .collect();
        script = script.rule(
            MockRule::reply(replies)
                .for_role(RoleTag::NarrativeGen)
                .containing(format!("STATEMENT-P{p}")),
        );
    }
    // narrative solver prompts: the example section is followed by the I/O
    // contract (NarrOnly) or by the original problem (NarrConcat)
    for (p, cats, only, concat) in VARIANTS {
        for j in 1..=5 {
            if cats[j - 1].is_none() {
                continue;
            }
            for (code, follows) in [(only[j - 1], "\n\nWrite a"), (concat[j - 1], "\n\n### Original Problem:")] {
                script = script.rule(
                    MockRule::reply(vec![reply(code)])
                        .for_role(RoleTag::Solver)
                        .containing(format!("[EX-P{p}-{j}]{follows}")),
                );
            }
        }
    }
    // repeated sampling: one rule per problem handing out its ten replies
    for (p, plan) in RS {
        let replies = plan
            .iter()
            .flat_map(|(m, n)| std::iter::repeat_n(reply(m), *n))
            .collect();
        script = script.rule(
            MockRule::reply(replies)
                .for_role(RoleTag::Solver)
                .containing(format!("STATEMENT-P{p}")),
        );
    }
    for (marker, _, answers) in CODES {
        script = script.rule(
            MockRule::reply(answers.iter().map(|a| MockReply::Text(a.to_string())).collect())
                .for_role(RoleTag::BackTranslator)
                .containing(format!("# {marker}\n")),
        );
    }
    script.with_default(MockReply::Error {
        status: 400,
        body: "unscripted prompt".into(),
    })
}

pub const E2E_CALLS: usize = 20 + 68 + 68;

pub fn e2e_config_text(max_in_flight: usize) -> String {
    format!(
        r#"output_dir = "run"
benchmark = "custom"
dataset = "problems.jsonl"
strategies = ["RS", "NarrOnly", "NarrConcat"]
ks = [1, 5, 10]
narr_backend = "mock"
solve_backend = "mock"
alg_backend = "mock"
max_in_flight = {max_in_flight}
parallel_exec = 4

[limits]
time_ms = 5000
memory_mb = 512

[seeds]
sampling = 11
permutation = 12
misalignment = 13

[[backends]]
backend_id = "mock"
kind = "mock"
model_name = "scripted"
requests_per_minute = 6000000
script = "script.json"
"#
    )
}

/// Writes dataset, script and config into `dir`; returns the config path.
pub fn write_e2e(dir: &Path, max_in_flight: usize) -> PathBuf {
    write_problems(&dir.join("problems.jsonl"), &e2e_problems()).unwrap();
    std::fs::write(dir.join("script.json"), serde_json::to_string_pretty(&e2e_script()).unwrap()).unwrap();
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, e2e_config_text(max_in_flight)).unwrap();
    cfg
}

/// Hand-traced expectations (see the plan above).
pub mod expected {
    /// `(arm, k, pass@k)`.
    pub const PASS_AT_K: &[(&str, usize, f64)] = &[
        // RS: P1 10/10, P2 4/10, P3 0/10, P4 2/10
        ("RS", 1, (1.0 + 0.4 + 0.0 + 0.2) / 4.0),
        ("RS", 5, (1.0 + (1.0 - 6.0 / 252.0) + 0.0 + (1.0 - 56.0 / 252.0)) / 4.0),
        ("RS", 10, 0.75),
        // NarrOnly: P1 5/5, P2 3/4, P3 2/5, P4 no samples
        ("NarrOnly", 1, (1.0 + 0.75 + 0.4) / 3.0),
        ("NarrOnly", 5, 1.0),
        ("NarrOnly", 10, 1.0),
        // NarrConcat: P1 5/5, P2 3/4, P3 0/5
        ("NarrConcat", 1, (1.0 + 0.75) / 3.0),
        ("NarrConcat", 10, 2.0 / 3.0),
        // pooled: P1 10/10, P2 6/8, P3 2/10
        ("Narr", 1, (1.0 + 0.75 + 0.2) / 3.0),
        ("Narr", 5, (1.0 + 1.0 + (1.0 - 56.0 / 252.0)) / 3.0),
        ("Narr", 10, 1.0),
    ];
    /// `(arm, coverage)`.
    pub const COVERAGE: &[(&str, f64)] = &[("RS", 0.75), ("NarrOnly", 1.0), ("NarrConcat", 2.0 / 3.0), ("Narr", 1.0)];
    /// `(arm, correct, matched, skipped)`.
    pub const AGREEMENT: &[(&str, usize, usize, usize)] = &[
        ("RS", 14, 10, 2),
        ("NarrOnly", 10, 8, 0),
        ("NarrConcat", 8, 8, 0),
        ("Narr", 18, 16, 0),
    ];
    /// `(arm, drawn, planned)`.
    pub const USED: &[(&str, usize, usize)] = &[("RS", 40, 40), ("NarrOnly", 14, 20), ("NarrConcat", 14, 20), ("Narr", 28, 40)];
    /// Original (RS) then narrative (Narr):
    /// `(problems, excluded_trivial, correct, implementation, wrong_algorithm, unclassified)`.
    pub const DECOMPOSITION: [(usize, usize, usize, usize, usize, usize); 2] = [(2, 1, 4, 6, 9, 1), (2, 1, 8, 6, 4, 0)];
}

// ---------------------------------------------------------------------------
// Validity corpus: three replies per class, in the shapes seen from real
// generators (truncated, repeated, missing sections, stray formatting).
// ---------------------------------------------------------------------------

pub const VALIDITY_MAX_TOKENS: usize = 400;

pub fn validity_corpus() -> Vec<(&'static str, String, Validity)> {
    let filler = |w: &str, n: usize| vec![w; n].join(" ");
    let full = |overview: &str, constraints: &str, example: &str| {
        format!(
            "- Algorithm Category: Dynamic Programming\n- Narrative Genre: Mystery\n- Task Overview: {overview}\n- Constraints: {constraints}\n- Example Input/Output: {example}"
        )
    };
    vec![
        (
            "plain five sections",
            full(&filler("detective", 40), &filler("limit", 10), &filler("clue", 10)),
            Validity::Valid,
        ),
        (
            "bold numbered headers",
            format!(
                "1. **Algorithm Category:** Greedy Algorithms\n2. **Narrative Genre:** Fable\n3. **Task Overview:** {}\n4. **Constraints:** {}\n5. **Example Input/Output:** {}",
                filler("fox", 35),
                filler("n", 10),
                filler("io", 10)
            ),
            Validity::Valid,
        ),
        (
            "markdown headings with multi-line bodies",
            format!(
                "### Algorithm Category: Graph Algorithms\n### Narrative Genre: Space opera\n### Task Overview:\n{}\n{}\n### Constraints:\n{}\n### Example Input / Output:\n{}",
                filler("star", 20),
                filler("ship", 20),
                filler("warp", 10),
                filler("sample", 8)
            ),
            Validity::Valid,
        ),
        ("a refusal", "I'm sorry, but I can't help with rewriting this problem.".to_string(), Validity::TooShort),
        (
            "truncated after the tags",
            "- Algorithm Category: Data Structures\n- Narrative Genre: Western\n- Task Overview: In a dusty town the sheriff".to_string(),
            Validity::TooShort,
        ),
        ("empty reply", String::new(), Validity::TooShort),
        (
            "one phrase repeated to the limit",
            full(&filler("again and again", 140), "n", "x"),
            Validity::DegenerateRepetition,
        ),
        (
            "looping sections",
            (0..70).map(|_| "- Constraints: the same rule applies").collect::<Vec<_>>().join("\n"),
            Validity::DegenerateRepetition,
        ),
        ("token soup", filler("the", 399), Validity::DegenerateRepetition),
        (
            "no example section",
            format!(
                "- Algorithm Category: Dynamic Programming\n- Narrative Genre: Mystery\n- Task Overview: {}\n- Constraints: {}",
                filler("detective", 40),
                filler("limit", 10)
            ),
            Validity::MissingComponents,
        ),
        ("story without headers", filler("once upon a time", 30), Validity::MissingComponents),
        (
            "empty constraints",
            full(&filler("detective", 40), "", &filler("clue", 10)),
            Validity::MissingComponents,
        ),
    ]
}

// ---------------------------------------------------------------------------
// Sandbox corpus: twenty candidates for one stdin problem and one function
// problem.
// ---------------------------------------------------------------------------

pub fn sandbox_problems() -> Vec<Problem> {
    vec![
        Problem::new("double", "Print twice the input integer.", IoMode::StdinStdout, Source::Custom)
            .with_examples(vec![TestCase::new("2", "4")])
            .with_hidden_tests(vec![TestCase::new("-3", "-6"), TestCase::new("0", "0")]),
        Problem::new("add", "Return a + b.", IoMode::FunctionCompletion, Source::HumanEval)
            .with_signature("def add(a, b):")
            .with_examples(vec![TestCase::new("1, 2", "3")])
            .with_hidden_tests(vec![TestCase::new("-1, 1", "0"), TestCase::new("10, 5", "15")]),
    ]
}

/// `(problem, reply, expected overall_correct)`.
pub fn sandbox_corpus() -> Vec<(&'static str, String, bool)> {
    let py = |body: &str| format!("```python\n{body}\n```");
    vec![
        ("double", py("print(2 * int(input()))"), true),
        ("double", py("n = int(input())\nprint(n + n)"), true),
        ("double", py("import sys\nprint(int(sys.stdin.read()) * 2)   "), true),
        ("double", py("print(int(input()) * 2)\n\n"), true),
        ("double", py("print(int(input()) ** 2)"), false),
        ("double", py("print(abs(2 * int(input())))"), false),
        ("double", py("while True:\n    pass"), false),
        ("double", py("import time\ntime.sleep(30)"), false),
        ("double", py("raise SystemExit(3)"), false),
        ("double", py("print(1 / 0)"), false),
        ("double", py("x = [0] * (10 ** 10)"), false),
        ("double", py("import os\nif os.fork() == 0:\n    import time\n    time.sleep(60)\nprint(2 * int(input()))"), true),
        ("double", "no code here at all".to_string(), false),
        ("double", "```\nprint(2 * int(input()))\n```".to_string(), true),
        ("add", py("def add(a, b):\n    return a + b"), true),
        ("add", py("return a + b"), true),
        ("add", py("def helper(x):\n    return x\n\ndef add(a, b):\n    return helper(a) + helper(b)"), true),
        ("add", py("def add(a, b):\n    return a - b"), false),
        ("add", py("def add(a, b):\n    return add(a, b)"), false),
        ("add", "Sorry, I cannot do that.".to_string(), false),
    ]
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Fraction of the size-`k` subsets of `n` samples (the first `c` correct)
/// containing a correct one.
pub fn brute_pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    let correct_mask = (1u32 << c) - 1;
    let (mut hit, mut total) = (0u64, 0u64);
    for subset in 0u32..(1 << n) {
        if subset.count_ones() as usize != k {
            continue;
        }
        total += 1;
        if subset & correct_mask != 0 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// U of `a` against `b`: pairs with x > y, ties counting one half.
pub fn brute_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// One-sided exact p by relabelling: every way of choosing which |a| of the
/// pooled observations form the first sample, counting those whose U is at
/// least the observed one.
pub fn brute_mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let observed = brute_u(a, b);
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let (xa, xb): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
            pooled.iter().copied().enumerate().partition(|(i, _)| mask >> i & 1 == 1);
        let xa: Vec<f64> = xa.into_iter().map(|p| p.1).collect();
        let xb: Vec<f64> = xb.into_iter().map(|p| p.1).collect();
        total += 1;
        if brute_u(&xa, &xb) >= observed - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

// ---------------------------------------------------------------------------
// Real benchmark dumps (optional)
//
// `NARRATIVE_HARNESS_DATA` names a directory holding `human_eval.jsonl`,
// `live_code_bench.jsonl` and `code_forces.jsonl` in the documented record
// format. `human_eval_ids.txt` (one id per line), when present, pins the
// HumanEval evaluation set.
// ---------------------------------------------------------------------------

pub const DATA_ENV: &str = "NARRATIVE_HARNESS_DATA";
pub const LONG_SUBSET_SEED: u64 = 0;

/// `(label, expected, observed)` for every dump found; `None` when the
/// variable is unset.
pub fn real_dataset_counts() -> Option<Result<Vec<(&'static str, usize, usize)>, String>> {
    use narrative_harness::dataset::{apply_filter, load_problems, sample_long_subset, DatasetFilterSpec};
    let dir = PathBuf::from(std::env::var_os(DATA_ENV)?);
    let run = || -> Result<Vec<(&'static str, usize, usize)>, String> {
        let mut out = Vec::new();
        let with_examples = DatasetFilterSpec {
            require_examples: true,
            ..DatasetFilterSpec::default()
        };
        let he = dir.join("human_eval.jsonl");
        if he.is_file() {
            let problems = load_problems(&he, Source::HumanEval).map_err(|e| e.to_string())?;
            let mut spec = with_examples.clone();
            if let Ok(ids) = std::fs::read_to_string(dir.join("human_eval_ids.txt")) {
                spec.id_allowlist = Some(ids.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect());
            }
            out.push(("HumanEval", 105, apply_filter(&problems, &spec).len()));
        }
        let lcb = dir.join("live_code_bench.jsonl");
        if lcb.is_file() {
            let problems = load_problems(&lcb, Source::LiveCodeBench).map_err(|e| e.to_string())?;
            out.push(("LiveCodeBench", 175, apply_filter(&problems, &with_examples).len()));
        }
        let cf = dir.join("code_forces.jsonl");
        if cf.is_file() {
            let problems = load_problems(&cf, Source::CodeForces).map_err(|e| e.to_string())?;
            let spec = DatasetFilterSpec {
                max_length: Some(1000),
                min_rating: Some(2000),
                require_examples: true,
                id_allowlist: None,
            };
            out.push(("CodeForces", 265, apply_filter(&problems, &spec).len()));
            let rated = DatasetFilterSpec {
                min_rating: Some(2000),
                require_examples: true,
                ..DatasetFilterSpec::default()
            };
            let long = sample_long_subset(&apply_filter(&problems, &rated), 1000, 128, LONG_SUBSET_SEED)
                .map_err(|e| e.to_string())?;
            out.push(("CodeForces-L", 128, long.len()));
        }
        if out.is_empty() {
            return Err(format!("{} holds none of the expected dumps", dir.display()));
        }
        Ok(out)
    };
    Some(run())
}
