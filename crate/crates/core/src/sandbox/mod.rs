//! Running candidate programs against a problem's tests.
//!
//! Each test gets a fresh interpreter process in a fresh temporary directory
//! (see [`process`] for the isolation applied). Standard-I/O problems feed the
//! test input on stdin and compare stdout. Function-completion problems run a
//! small driver that defines the candidate, calls the entry point with the
//! test's argument list and compares `repr` of the result with `repr` of the
//! expected value. A problem may carry its own checker program instead.
//!
//! ## Function-completion test format
//!
//! `TestCase.input` is the text of a Python argument list (`"[1, 2], 3"`;
//! empty for no arguments) and `TestCase.output` a Python expression for the
//! expected return value.
//!
//! ## Checker protocol
//!
//! The checker source is written next to the candidate and run with one JSON
//! object on stdin: `{"input": ..., "expected": ..., "actual": ...}`, where
//! `actual` is the captured stdout or the `repr` of the return value. Exit
//! status 0 means the test passed.

mod extract;
pub(crate) mod process;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::{IoMode, Problem, TestCase};

pub use extract::{extract_code, extract_code_tagged, PYTHON_TAGS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SandboxError {
    #[error("interpreter `{0}` not found")]
    InterpreterMissing(String),
    #[error("sandbox setup failed: {0}")]
    SandboxSetupFailure(String),
    #[error("no problem with id `{0}`")]
    UnknownProblem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestVerdict {
    Pass,
    WrongOutput,
    RuntimeError,
    Timeout,
    MemoryExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub per_test: Vec<TestVerdict>,
    pub overall_correct: bool,
    pub wall_ms_per_test: Vec<u64>,
}

impl ExecutionVerdict {
    pub fn new(per_test: Vec<TestVerdict>, wall_ms_per_test: Vec<u64>) -> Self {
        Self {
            overall_correct: !per_test.is_empty() && per_test.iter().all(|v| *v == TestVerdict::Pass),
            per_test,
            wall_ms_per_test,
        }
    }

    /// Verdict for a candidate with no code: every test fails, nothing runs.
    pub fn not_extracted(tests: usize) -> Self {
        Self::new(vec![TestVerdict::RuntimeError; tests], vec![0; tests])
    }
}

/// One sampled program for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub problem_id: String,
    /// Label of the prompting strategy (arm) that produced it.
    pub strategy: String,
    pub sample_index: usize,
    pub source_code: String,
    pub language_tag: String,
    pub extraction_ok: bool,
}

impl CandidateSolution {
    /// Extracts the program from a raw model reply.
    pub fn from_reply(problem_id: &str, strategy: &str, sample_index: usize, reply: &str) -> Self {
        let (source_code, extraction_ok) = extract_code(reply);
        Self {
            problem_id: problem_id.to_string(),
            strategy: strategy.to_string(),
            sample_index,
            source_code,
            language_tag: "python".to_string(),
            extraction_ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub time_ms: u64,
    pub memory_mb: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            time_ms: 10_000,
            memory_mb: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    pub interpreter: PathBuf,
    pub interpreter_args: Vec<String>,
    pub limits: Limits,
    /// Compare outputs byte for byte instead of normalizing whitespace.
    pub exact_match: bool,
    pub isolate_network: bool,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
            interpreter_args: vec!["-I".to_string()],
            limits: Limits::default(),
            exact_match: false,
            isolate_network: true,
        }
    }
}

const DRIVER: &str = r#"import io, json, sys
_case = json.loads(sys.stdin.read())
_out = sys.stdout
sys.stdout = sys.stderr
sys.stdin = io.StringIO("")
_ns = {"__name__": "__solution__"}
try:
    exec(compile(open("signature.py").read(), "signature.py", "exec"), _ns)
except SyntaxError:
    pass
exec(compile(open("solution.py").read(), "solution.py", "exec"), _ns)
_fn = _ns[_case["entry"]]
_src = _case["input"].strip()
_args = eval("(" + _src + ",)", dict(_ns)) if _src else ()
_actual = repr(_fn(*_args))
_expected = repr(eval(_case["expected"], dict(_ns)))
sys.stdout = _out
print(json.dumps({"actual": _actual, "expected": _expected}))
"#;

impl Sandbox {
    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn with_exact_match(mut self, exact: bool) -> Self {
        self.exact_match = exact;
        self
    }

    /// Absolute interpreter path, searched on `PATH` when given bare.
    pub fn resolve_interpreter(&self) -> Result<PathBuf, SandboxError> {
        let missing = || SandboxError::InterpreterMissing(self.interpreter.display().to_string());
        if self.interpreter.components().count() > 1 {
            return self.interpreter.is_file().then(|| self.interpreter.clone()).ok_or_else(missing);
        }
        let path = std::env::var_os("PATH").ok_or_else(missing)?;
        std::env::split_paths(&path)
            .map(|dir| dir.join(&self.interpreter))
            .find(|p| p.is_file())
            .ok_or_else(missing)
    }

    pub fn run_candidate(&self, candidate: &CandidateSolution, problem: &Problem) -> Result<ExecutionVerdict, SandboxError> {
        let tests: Vec<&TestCase> = problem.all_tests().collect();
        if tests.is_empty() {
            return Err(SandboxError::SandboxSetupFailure(format!("problem {} has no tests", problem.id)));
        }
        if self.limits.time_ms == 0 || self.limits.memory_mb == 0 {
            return Err(SandboxError::SandboxSetupFailure("limits must be positive".into()));
        }
        if !candidate.extraction_ok {
            return Ok(ExecutionVerdict::not_extracted(tests.len()));
        }
        let interpreter = self.resolve_interpreter()?;
        let mut per_test = Vec::with_capacity(tests.len());
        let mut wall = Vec::with_capacity(tests.len());
        for test in tests {
            let (verdict, ms) = self.run_test(&interpreter, candidate, problem, test)?;
            per_test.push(verdict);
            wall.push(ms);
        }
        Ok(ExecutionVerdict::new(per_test, wall))
    }

    fn run_test(
        &self,
        interpreter: &Path,
        candidate: &CandidateSolution,
        problem: &Problem,
        test: &TestCase,
    ) -> Result<(TestVerdict, u64), SandboxError> {
        let dir = tempfile::Builder::new()
            .prefix("nh-run-")
            .tempdir()
            .map_err(|e| SandboxError::SandboxSetupFailure(format!("temp dir: {e}")))?;
        let write = |name: &str, text: &str| {
            std::fs::write(dir.path().join(name), text)
                .map_err(|e| SandboxError::SandboxSetupFailure(format!("write {name}: {e}")))
        };
        let (entry_file, stdin) = match problem.io_mode {
            IoMode::StdinStdout => {
                write("main.py", &candidate.source_code)?;
                ("main.py", test.input.clone())
            }
            IoMode::FunctionCompletion => {
                let entry = problem.entry_point().ok_or_else(|| {
                    SandboxError::SandboxSetupFailure(format!("problem {} has no entry point", problem.id))
                })?;
                let signature = problem.function_signature.as_deref().unwrap_or("");
                write("signature.py", signature)?;
                write("solution.py", &complete_function(&candidate.source_code, signature, entry))?;
                write("main.py", DRIVER)?;
                let case = serde_json::json!({"entry": entry, "input": test.input, "expected": test.output});
                ("main.py", case.to_string())
            }
        };
        let mut args = self.interpreter_args.clone();
        args.push(entry_file.to_string());
        let run = process::run(process::Spawn {
            program: interpreter,
            args: &args,
            cwd: dir.path(),
            stdin: stdin.as_bytes(),
            limits: self.limits,
            isolate_network: self.isolate_network,
        })?;
        if run.timed_out {
            return Ok((TestVerdict::Timeout, run.wall_ms));
        }
        let stderr = String::from_utf8_lossy(&run.stderr);
        if !run.success() {
            let verdict = if stderr.contains("MemoryError") {
                TestVerdict::MemoryExceeded
            } else {
                TestVerdict::RuntimeError
            };
            return Ok((verdict, run.wall_ms));
        }
        let stdout = String::from_utf8_lossy(&run.stdout);
        let (actual, expected) = match problem.io_mode {
            IoMode::StdinStdout => (stdout.into_owned(), test.output.clone()),
            IoMode::FunctionCompletion => match parse_driver_line(&stdout) {
                Some(pair) => pair,
                None => return Ok((TestVerdict::RuntimeError, run.wall_ms)),
            },
        };
        let pass = match &problem.checker {
            Some(checker) => self.run_checker(interpreter, dir.path(), checker, test, &actual)?,
            None if self.exact_match => actual == expected,
            None => normalize_output(&actual) == normalize_output(&expected),
        };
        let verdict = if pass { TestVerdict::Pass } else { TestVerdict::WrongOutput };
        Ok((verdict, run.wall_ms))
    }

    fn run_checker(
        &self,
        interpreter: &Path,
        dir: &Path,
        checker: &str,
        test: &TestCase,
        actual: &str,
    ) -> Result<bool, SandboxError> {
        std::fs::write(dir.join("checker.py"), checker)
            .map_err(|e| SandboxError::SandboxSetupFailure(format!("write checker: {e}")))?;
        let payload = serde_json::json!({"input": test.input, "expected": test.output, "actual": actual}).to_string();
        let mut args = self.interpreter_args.clone();
        args.push("checker.py".to_string());
        let run = process::run(process::Spawn {
            program: interpreter,
            args: &args,
            cwd: dir,
            stdin: payload.as_bytes(),
            limits: self.limits,
            isolate_network: self.isolate_network,
        })?;
        Ok(run.success())
    }

    /// Judges every candidate with at most `parallelism` candidates running
    /// at once. `verdicts[i]` belongs to `candidates[i]`.
    pub fn run_all(
        &self,
        candidates: &[CandidateSolution],
        problems: &HashMap<String, Problem>,
        parallelism: usize,
    ) -> Vec<Result<ExecutionVerdict, SandboxError>> {
        let slots: Vec<Mutex<Option<Result<ExecutionVerdict, SandboxError>>>> =
            candidates.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..parallelism.max(1).min(candidates.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cand) = candidates.get(i) else { break };
                    let verdict = match problems.get(&cand.problem_id) {
                        Some(p) => self.run_candidate(cand, p),
                        None => Err(SandboxError::UnknownProblem(cand.problem_id.clone())),
                    };
                    *slots[i].lock().unwrap() = Some(verdict);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}

/// Candidate text as a full module: kept as is when it defines `entry`,
/// otherwise treated as the function body and appended to the signature.
fn complete_function(source: &str, signature: &str, entry: &str) -> String {
    let defines = source.lines().any(|l| {
        l.trim_start()
            .strip_prefix("def ")
            .is_some_and(|rest| rest.trim_start().strip_prefix(entry).is_some_and(|r| r.trim_start().starts_with('(')))
    });
    if defines {
        return source.to_string();
    }
    let mut out = signature.trim_end().to_string();
    out.push('\n');
    for line in source.lines() {
        if line.trim().is_empty() {
            out.push('\n');
        } else if line.starts_with(' ') || line.starts_with('\t') {
            out.push_str(line);
            out.push('\n');
        } else {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn parse_driver_line(stdout: &str) -> Option<(String, String)> {
    let line = stdout.lines().rev().find(|l| !l.trim().is_empty())?;
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    Some((v["actual"].as_str()?.to_string(), v["expected"].as_str()?.to_string()))
}

/// Strips trailing whitespace on every line and trailing blank lines.
pub fn normalize_output(s: &str) -> String {
    let lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    let keep = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    lines[..keep].join("\n")
}
