//! Client for the external syntax-tree probe.
//!
//! The probe is any program that reads Python source on stdin and prints one
//! JSON line:
//!
//! ```json
//! {"protocol_version": 1, "function_count": 2, "has_helper": true, "max_depth": 9, "parse_ok": true}
//! ```
//!
//! When `parse_ok` is false the three metric fields are absent. Exit status
//! is 0 even for unparseable source; a nonzero exit is a probe crash.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::sandbox::process::{self, Spawn};
use crate::sandbox::Limits;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProbeError {
    #[error("probe unavailable: {0}")]
    Unavailable(String),
    #[error("probe crashed: {0}")]
    Crashed(String),
    #[error("probe protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_helper: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<u32>,
    pub parse_ok: bool,
}

impl StructuralMetrics {
    pub fn parsed(function_count: u32, has_helper: bool, max_depth: u32) -> Self {
        Self {
            protocol_version: Some(PROTOCOL_VERSION),
            function_count: Some(function_count),
            has_helper: Some(has_helper),
            max_depth: Some(max_depth),
            parse_ok: true,
        }
    }

    pub fn unparsed() -> Self {
        Self {
            protocol_version: Some(PROTOCOL_VERSION),
            function_count: None,
            has_helper: None,
            max_depth: None,
            parse_ok: false,
        }
    }

    /// Parses and checks one record line.
    pub fn from_line(line: &str) -> Result<Self, ProbeError> {
        let m: StructuralMetrics =
            serde_json::from_str(line.trim()).map_err(|e| ProbeError::Protocol(format!("{e}: {line:?}")))?;
        m.check()?;
        Ok(m)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    fn check(&self) -> Result<(), ProbeError> {
        if let Some(v) = self.protocol_version {
            if v > PROTOCOL_VERSION {
                return Err(ProbeError::Protocol(format!("unsupported protocol version {v}")));
            }
        }
        let fields = [self.function_count.is_some(), self.has_helper.is_some(), self.max_depth.is_some()];
        if self.parse_ok {
            if fields.contains(&false) {
                return Err(ProbeError::Protocol("parsed record lacks a metric".into()));
            }
            if self.max_depth == Some(0) {
                return Err(ProbeError::Protocol("max_depth must be at least 1".into()));
            }
        } else if fields.contains(&true) {
            return Err(ProbeError::Protocol("unparsed record carries metrics".into()));
        }
        Ok(())
    }
}

/// Runs the probe command once per source text.
#[derive(Debug, Clone)]
pub struct ProbeClient {
    program: PathBuf,
    args: Vec<String>,
    limits: Limits,
}

impl ProbeClient {
    /// `command[0]` is looked up on `PATH` when it has no directory part.
    pub fn new(command: &[String]) -> Result<Self, ProbeError> {
        let (head, args) = command
            .split_first()
            .ok_or_else(|| ProbeError::Unavailable("no probe command configured".into()))?;
        Ok(Self {
            program: locate(head).ok_or_else(|| ProbeError::Unavailable(format!("`{head}` not found")))?,
            args: args.to_vec(),
            limits: Limits {
                time_ms: 30_000,
                memory_mb: 1024,
            },
        })
    }

    pub fn probe(&self, source: &str) -> Result<StructuralMetrics, ProbeError> {
        let cwd = std::env::temp_dir();
        let run = process::run(Spawn {
            program: &self.program,
            args: &self.args,
            cwd: &cwd,
            stdin: source.as_bytes(),
            limits: self.limits,
            isolate_network: false,
        })
        .map_err(|e| ProbeError::Unavailable(e.to_string()))?;
        if run.timed_out {
            return Err(ProbeError::Crashed("timed out".into()));
        }
        if !run.success() {
            let stderr = String::from_utf8_lossy(&run.stderr);
            let tail = stderr.lines().last().unwrap_or("").to_string();
            return Err(ProbeError::Crashed(format!("{:?}: {tail}", run.status)));
        }
        let stdout = String::from_utf8_lossy(&run.stdout);
        let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
        match lines.as_slice() {
            [line] => StructuralMetrics::from_line(line),
            _ => Err(ProbeError::Protocol(format!("expected one record line, got {}", lines.len()))),
        }
    }

    /// Probes every source with at most `parallelism` probes at once;
    /// results are positionally aligned.
    pub fn probe_all(&self, sources: &[String], parallelism: usize) -> Vec<Result<StructuralMetrics, ProbeError>> {
        let slots: Vec<Mutex<Option<Result<StructuralMetrics, ProbeError>>>> =
            sources.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..parallelism.max(1).min(sources.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(src) = sources.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.probe(src));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}

fn locate(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::split_paths(&std::env::var_os("PATH")?)
        .map(|d| d.join(program))
        .find(|c| c.is_file())
}
