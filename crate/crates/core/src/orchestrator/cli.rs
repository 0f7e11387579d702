//! Command line.
//!
//! Exit codes: 0 success (including `--help`), 1 usage, config, credential
//! or setup errors, 2 when the run finished with failed items (details in
//! the record).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::analysis::{run_analysis, Analysis};
use super::config::RunConfig;
use super::pipeline::{Clients, DryRunPlan, Pipeline, StageSet, METRICS_DIR};
use super::record::{RecordState, RECORD_FILE};
use super::report::{self, ANALYSIS_DIR, REPORT_FILE};
use super::tables::{MetricTables, RunData};
use super::OrchestratorError;
use crate::probe::ProbeClient;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "narrative-harness",
    version,
    about = "Narrative reformulation harness for code-generation evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate narratives (and paraphrases) only
    Transform(RunArgs),
    /// Generate narratives and solver samples
    Solve(RunArgs),
    /// Full run: narratives, samples, sandbox judging, back-translation, metric tables
    Eval(RunArgs),
    /// Run analyses over an existing record
    Analyze(AnalyzeArgs),
    /// Write report.md for an existing record
    Report(RecordArgs),
    /// Recompute the metric tables from a record
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the benchmark source
    #[arg(long)]
    benchmark: Option<String>,
    /// Override the strategy list (comma separated)
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Override the k values (comma separated)
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Print the call plan and exit without contacting any backend
    #[arg(long)]
    dry_run: bool,
    /// Continue the run recorded in the output directory
    #[arg(long)]
    resume: bool,
    /// Compare outputs byte for byte
    #[arg(long)]
    exact_match: bool,
    #[arg(long)]
    parallel_exec: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Debug, Args)]
struct RecordArgs {
    /// Run configuration; the record is read from its output directory
    #[arg(long, required_unless_present = "record")]
    config: Option<PathBuf>,
    /// Path to record.jsonl
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: RecordArgs,
    /// Analyses to run (comma separated); default all
    #[arg(long, value_delimiter = ',')]
    analyses: Option<Vec<String>>,
    /// Probe command line, overriding the recorded one
    #[arg(long)]
    probe: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    source: RecordArgs,
    /// Directory for the recomputed tables (default: <run>/metrics)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command. `env` supplies
/// credentials.
pub fn run<I, T>(argv: I, env: &dyn Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, env) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command, env: &dyn Fn(&str) -> Option<String>) -> Result<i32, OrchestratorError> {
    match command {
        Command::Transform(a) => run_stages(a, StageSet::TRANSFORM, env),
        Command::Solve(a) => run_stages(a, StageSet::SOLVE, env),
        Command::Eval(a) => run_stages(a, StageSet::EVAL, env),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => write_report(a),
        Command::Replay(a) => replay(a),
    }
}

fn load_config(a: &RunArgs) -> Result<RunConfig, OrchestratorError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(b) = &a.benchmark {
        cfg.benchmark = b.parse().map_err(OrchestratorError::Config)?;
    }
    if let Some(s) = &a.strategies {
        cfg.strategies = s.clone();
    }
    if let Some(k) = &a.k {
        cfg.ks = k.clone();
    }
    if a.exact_match {
        cfg.exact_match = true;
    }
    if let Some(n) = a.parallel_exec {
        cfg.parallel_exec = n;
    }
    if let Some(n) = a.max_in_flight {
        cfg.max_in_flight = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stages(a: RunArgs, stages: StageSet, env: &dyn Fn(&str) -> Option<String>) -> Result<i32, OrchestratorError> {
    let cfg = load_config(&a)?;
    if a.dry_run {
        let mut plan = DryRunPlan::compute(&cfg)?;
        let narrative_only = !stages.solve;
        if narrative_only {
            plan.solve_calls = 0;
        }
        if narrative_only || !stages.judge {
            plan.back_translation_calls = 0;
        }
        print!("{}", plan.render());
        return Ok(EXIT_OK);
    }
    let clients = Clients::connect(&cfg, env)?;
    let mut pipeline = Pipeline::open(cfg, a.resume)?;
    let summary = pipeline.run(stages, &clients)?;
    for (stage, n) in &summary.calls {
        println!("{stage:?} calls: {n}");
    }
    if let Some(t) = &summary.tables {
        println!(
            "metrics written to {}",
            pipeline.config().output_dir.join(METRICS_DIR).display()
        );
        print!("{}", t.files["pass_at_k.tsv"]);
    }
    let partial = summary.partial_failures();
    if partial > 0 {
        eprintln!("{partial} items failed; see {}", pipeline.record_path().display());
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

/// Record path and run directory named by `--record` or `--config`.
fn locate_record(a: &RecordArgs) -> Result<(PathBuf, PathBuf), OrchestratorError> {
    let record = match (&a.record, &a.config) {
        (Some(r), _) => r.clone(),
        (None, Some(c)) => RunConfig::load(c)?.output_dir.join(RECORD_FILE),
        (None, None) => return Err(OrchestratorError::Config("pass --record or --config".into())),
    };
    if !record.is_file() {
        return Err(OrchestratorError::Config(format!("no run record at {}", record.display())));
    }
    let dir = record.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((record, dir))
}

fn load_data(record: &Path) -> Result<RunData, OrchestratorError> {
    RunData::from_record(&RecordState::load(record)?)
}

fn analyze(a: AnalyzeArgs) -> Result<i32, OrchestratorError> {
    let (record, dir) = locate_record(&a.source)?;
    let data = load_data(&record)?;
    let which: Vec<Analysis> = match &a.analyses {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?,
        None => Analysis::ALL.to_vec(),
    };
    let command: Vec<String> = match &a.probe {
        Some(p) => p.split_whitespace().map(str::to_string).collect(),
        None => data.config.probe_cmd.clone(),
    };
    let probe = match ProbeClient::new(&command) {
        Ok(p) => Some(p),
        Err(e) => {
            log::info!("{e}; structural metrics are skipped");
            None
        }
    };
    let out_dir = dir.join(ANALYSIS_DIR);
    std::fs::create_dir_all(&out_dir).map_err(|e| OrchestratorError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut failed = 0;
    for out in run_analysis(&data, &which, probe.as_ref(), data.config.parallel_exec) {
        match out.result {
            Ok(files) => {
                for (name, text) in files {
                    let path = out_dir.join(name);
                    std::fs::write(&path, text).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
                    println!("{}", path.display());
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", out.analysis.name());
            }
        }
    }
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn write_report(a: RecordArgs) -> Result<i32, OrchestratorError> {
    let (record, dir) = locate_record(&a)?;
    let data = load_data(&record)?;
    let tables = MetricTables::compute(&data)?;
    let analysis_dir = dir.join(ANALYSIS_DIR);
    let text = report::render(&data, &tables, analysis_dir.is_dir().then_some(analysis_dir.as_path()));
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, text).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

fn replay(a: ReplayArgs) -> Result<i32, OrchestratorError> {
    let (record, dir) = locate_record(&a.source)?;
    let tables = MetricTables::compute(&load_data(&record)?)?;
    let out = a.out.unwrap_or_else(|| dir.join(METRICS_DIR));
    tables.write_to(&out)?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}
