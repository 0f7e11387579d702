//! The run record: `record.jsonl` under the output directory.
//!
//! One JSON object per line, tagged by `event`:
//!
//! | event     | written when                         | carries                                   |
//! |-----------|--------------------------------------|-------------------------------------------|
//! | `header`  | a run starts on an empty directory   | schema version, config, problem ids       |
//! | `call`    | a backend call finishes (after retry) | key, stage metadata, request, response or error |
//! | `variant` | a narrative reply has been parsed    | the parsed variant (derived, informational) |
//! | `verdict` | a candidate has been judged          | key, extracted code, verdict or error     |
//!
//! The file is only ever appended to, one flushed line per event. On load
//! the latest event per key wins, except that a successful call is never
//! replaced by a later failure. A torn final line (crash mid-write) is
//! ignored.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::OrchestratorError;
use crate::backend::{BackendError, GenerationRequest, GenerationResponse};
use crate::prompts::NarrativeVariant;
use crate::sandbox::ExecutionVerdict;

pub const SCHEMA_VERSION: u32 = 1;
pub const RECORD_FILE: &str = "record.jsonl";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Narrative,
    Solve,
    BackTranslate,
}

/// Where a call sits in the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallMeta {
    pub stage: Stage,
    pub problem_id: String,
    /// Narrative source for narrative calls, arm label otherwise.
    pub arm: String,
    /// Variant index (1-based) or 0 when the arm has no variants.
    pub slot: usize,
    pub sample: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub retry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Response(GenerationResponse),
    Error(BackendError),
}

impl CallOutcome {
    pub fn text(&self) -> Option<&str> {
        match self {
            CallOutcome::Response(r) => Some(&r.text),
            CallOutcome::Error(_) => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, CallOutcome::Response(_))
    }
}

impl From<&Result<GenerationResponse, BackendError>> for CallOutcome {
    fn from(r: &Result<GenerationResponse, BackendError>) -> Self {
        match r {
            Ok(resp) => CallOutcome::Response(resp.clone()),
            Err(e) => CallOutcome::Error(e.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEntry {
    pub key: String,
    pub meta: CallMeta,
    pub request: GenerationRequest,
    pub outcome: CallOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub key: String,
    pub problem_id: String,
    pub arm: String,
    pub extraction_ok: bool,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ExecutionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub config: RunConfig,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Header(Header),
    Call(CallEntry),
    Variant {
        problem_id: String,
        source: String,
        variant: NarrativeVariant,
    },
    Verdict(VerdictEntry),
}

/// Everything a record file holds, indexed by key.
#[derive(Debug, Clone, Default)]
pub struct RecordState {
    pub header: Option<Header>,
    pub calls: BTreeMap<String, CallEntry>,
    pub verdicts: BTreeMap<String, VerdictEntry>,
}

impl RecordState {
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let mut state = Self::default();
        if !path.exists() {
            return Ok(state);
        }
        let file = File::open(path).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = BufReader::new(file).lines().enumerate().peekable();
        while let Some((i, line)) = lines.next() {
            let line = line.map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Event>(&line) {
                Ok(event) => state.apply(event)?,
                Err(e) if lines.peek().is_none() => {
                    log::warn!("{}: ignoring torn final line {}: {e}", path.display(), i + 1);
                }
                Err(e) => {
                    return Err(OrchestratorError::RecordCorrupt {
                        line: i + 1,
                        reason: e.to_string(),
                    })
                }
            }
        }
        Ok(state)
    }

    pub fn apply(&mut self, event: Event) -> Result<(), OrchestratorError> {
        match event {
            Event::Header(h) => {
                if h.schema_version > SCHEMA_VERSION {
                    return Err(OrchestratorError::RecordCorrupt {
                        line: 1,
                        reason: format!("schema version {} is newer than {SCHEMA_VERSION}", h.schema_version),
                    });
                }
                self.header = Some(h);
            }
            Event::Call(c) => {
                let keep_old = self
                    .calls
                    .get(&c.key)
                    .is_some_and(|old| old.outcome.is_ok() && !c.outcome.is_ok());
                if !keep_old {
                    self.calls.insert(c.key.clone(), c);
                }
            }
            Event::Variant { .. } => {}
            Event::Verdict(v) => {
                self.verdicts.insert(v.key.clone(), v);
            }
        }
        Ok(())
    }

    pub fn header(&self) -> Result<&Header, OrchestratorError> {
        self.header
            .as_ref()
            .ok_or_else(|| OrchestratorError::MissingField("record".into(), "header".into()))
    }

    /// Successful reply text for `key`.
    pub fn reply(&self, key: &str) -> Option<&str> {
        self.calls.get(key).and_then(|c| c.outcome.text())
    }

    pub fn has_reply(&self, key: &str) -> bool {
        self.reply(key).is_some()
    }

    pub fn calls_in(&self, stage: Stage) -> impl Iterator<Item = &CallEntry> {
        self.calls.values().filter(move |c| c.meta.stage == stage)
    }
}

/// Appends events, one flushed line each. Shareable across threads.
#[derive(Debug)]
pub struct RecordWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordWriter {
    pub fn open(path: &Path) -> Result<Self, OrchestratorError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, event: &Event) -> Result<(), OrchestratorError> {
        let mut line = serde_json::to_string(event).map_err(|e| OrchestratorError::Io(e.to_string()))?;
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| OrchestratorError::Io(format!("{}: {e}", self.path.display())))
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, OrchestratorError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(OrchestratorError::Locked(path)),
            Err(e) => Err(OrchestratorError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
