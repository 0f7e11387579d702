//! Narrative reformulation harness for code-generation evaluation.
//!
//! The pipeline rewrites each benchmark problem into structured narratives,
//! samples solutions from a chat model, judges them in a sandbox, and computes
//! pass@k plus the analyses built on it (algorithm agreement, error
//! decomposition, permuted and misaligned narratives, structural metrics).
//!
//! The modules follow the data flow:
//!
//! - [`dataset`]: problem dumps and evaluation-set filters
//! - [`prompts`]: prompt templates, narrative parsing, ablation variants
//! - [`backend`]: chat-model clients (HTTP and scripted mock)
//! - [`sandbox`]: candidate extraction and isolated execution
//! - [`metrics`]: pass@k, coverage, agreement, decomposition, Mann-Whitney U
//! - [`probe`]: client for the external syntax-tree probe
//! - [`orchestrator`]: run configuration, run records, pipeline, analyses, CLI

pub mod backend;
pub mod dataset;
pub mod metrics;
pub mod orchestrator;
pub mod probe;
pub mod prompts;
pub mod sandbox;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/narratives.md")]
    mod narratives {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/sandbox.md")]
    mod sandbox {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/runs.md")]
    mod runs {}
    #[doc = include_str!("../../../book/src/analyses.md")]
    mod analyses {}
}
