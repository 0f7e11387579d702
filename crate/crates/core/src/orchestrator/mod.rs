//! Run engine: configuration, the append-only run record, the staged
//! pipeline (narratives, solving, judging, back-translation), metric tables,
//! analyses, the markdown report and the command line.
//!
//! Stages talk to each other only through the record, so a run interrupted
//! anywhere resumes without repeating paid calls, and every table can be
//! recomputed from the record alone (`replay`).

pub mod analysis;
pub mod cli;
pub mod config;
pub mod pipeline;
pub mod plan;
pub mod record;
pub mod report;
pub mod tables;

use std::path::PathBuf;

pub use analysis::{run_analysis, Analysis, AnalysisOutput};
pub use config::RunConfig;
pub use pipeline::{Pipeline, RunSummary, StageSet};
pub use plan::{derive_seed, Arm, ArmInput, NarrSource};
pub use record::{RecordState, RecordWriter, RunLock, Stage, RECORD_FILE, SCHEMA_VERSION};
pub use tables::{MetricTables, RunData};

use crate::backend::BackendError;
use crate::dataset::DatasetError;
use crate::prompts::PromptError;
use crate::sandbox::SandboxError;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend `{backend}`: {source}")]
    Backend {
        backend: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("{0}: missing {1}")]
    MissingField(String, String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("run record line {line}: {reason}")]
    RecordCorrupt { line: usize, reason: String },
    #[error("output directory is locked by another run ({0}); remove the file if that run is gone")]
    Locked(PathBuf),
    #[error("{0} already holds a run record; pass --resume to continue it")]
    ResumeRequired(PathBuf),
}
