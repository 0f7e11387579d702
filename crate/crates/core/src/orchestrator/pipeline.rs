//! The staged run.
//!
//! 1. narratives (and paraphrases) for every problem, as the arms need them;
//! 2. solver samples for every arm slot;
//! 3. judging in the sandbox;
//! 4. back-translation of every extracted sample, with one reprompt when the
//!    reply names no category.
//!
//! Each stage plans its work from the record, skips keys that already have
//! a successful reply, and appends every finished call as it completes.
//! Failed calls stay in the record (and are retried by the next resume) but
//! never become samples.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::config::RunConfig;
use super::plan::{
    alg_key, arm_slots, derive_seed, narrative_counts, narrative_key, solve_key, solve_prompt, Arm, NarrSource,
    ProblemNarratives,
};
use super::record::{
    CallEntry, CallMeta, CallOutcome, Event, Header, RecordState, RecordWriter, RunLock, Stage, VerdictEntry,
    RECORD_FILE, SCHEMA_VERSION,
};
use super::tables::{recorded_calls, FailureCounts, MetricTables, RunData};
use super::OrchestratorError;
use crate::backend::{Client, GenerationRequest, RoleTag};
use crate::dataset::{apply_filter, load_problems, sample_long_subset, Problem};
use crate::prompts::{
    parse_backtranslation, MisalignedGenreSet, NarrativeVariant, PromptBook, TemplateRegistry,
};
use crate::sandbox::{CandidateSolution, ExecutionVerdict, Sandbox};

/// Directory (under the output directory) holding the metric tables.
pub const METRICS_DIR: &str = "metrics";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSet {
    pub narratives: bool,
    pub solve: bool,
    pub judge: bool,
    pub back_translate: bool,
}

impl StageSet {
    pub const TRANSFORM: Self = Self {
        narratives: true,
        solve: false,
        judge: false,
        back_translate: false,
    };
    pub const SOLVE: Self = Self {
        narratives: true,
        solve: true,
        judge: false,
        back_translate: false,
    };
    pub const EVAL: Self = Self {
        narratives: true,
        solve: true,
        judge: true,
        back_translate: true,
    };
}

/// One client per model role; roles sharing a backend id share a client.
#[derive(Debug, Clone)]
pub struct Clients {
    pub narrative: Client,
    pub solve: Client,
    pub alg: Client,
}

impl Clients {
    pub fn connect(cfg: &RunConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, OrchestratorError> {
        let mut cache: HashMap<&str, Client> = HashMap::new();
        let mut get = |id: &str| -> Result<Client, OrchestratorError> {
            if let Some(c) = cache.get(id) {
                return Ok(c.clone());
            }
            let c = cfg.backend(id)?.client(env).map_err(|source| OrchestratorError::Backend {
                backend: id.to_string(),
                source,
            })?;
            cache.insert(cfg.backend(id)?.backend_id.as_str(), c.clone());
            Ok(c)
        };
        Ok(Self {
            narrative: get(&cfg.narr_backend)?,
            solve: get(&cfg.solve_backend)?,
            alg: get(&cfg.alg_backend)?,
        })
    }

    /// The same client for every role.
    pub fn uniform(client: Client) -> Self {
        Self {
            narrative: client.clone(),
            solve: client.clone(),
            alg: client,
        }
    }
}

/// What one invocation did.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// Backend calls made by this invocation, per stage.
    pub calls: BTreeMap<Stage, usize>,
    pub failures: FailureCounts,
    pub tables: Option<MetricTables>,
}

impl RunSummary {
    pub fn calls_made(&self) -> usize {
        self.calls.values().sum()
    }

    /// Items that did not complete: failed calls, sandbox failures and,
    /// after judging, samples without a parsed back-translation.
    pub fn partial_failures(&self) -> usize {
        let f = &self.failures;
        f.backend + f.sandbox + if self.tables.is_some() { f.untranslated } else { 0 }
    }
}

/// Loads the dataset and applies the configured filter and long subset.
pub fn load_run_problems(cfg: &RunConfig) -> Result<Vec<Problem>, OrchestratorError> {
    let all = load_problems(&cfg.dataset, cfg.benchmark)?;
    let filtered = apply_filter(&all, &cfg.filter);
    Ok(match cfg.long_subset {
        Some(l) => sample_long_subset(&filtered, l.min_length_exclusive, l.count, cfg.seeds.sampling)?,
        None => filtered,
    })
}

fn prompt_book(cfg: &RunConfig) -> Result<PromptBook, OrchestratorError> {
    let templates = match &cfg.template_dir {
        Some(dir) => TemplateRegistry::with_overrides(dir)?,
        None => TemplateRegistry::builtin(),
    };
    let book = PromptBook::new(templates);
    book.check_strategies(&cfg.strategies()?)?;
    Ok(book)
}

struct Job {
    key: String,
    meta: CallMeta,
    request: GenerationRequest,
}

/// A run bound to its output directory, holding the directory lock.
pub struct Pipeline {
    cfg: RunConfig,
    problems: Vec<Problem>,
    arms: Vec<Arm>,
    book: PromptBook,
    genres: MisalignedGenreSet,
    record_path: PathBuf,
    writer: RecordWriter,
    state: RecordState,
    _lock: RunLock,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("output_dir", &self.cfg.output_dir)
            .field("problems", &self.problems.len())
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Opens (or starts) the run in `cfg.output_dir`. An existing record is
    /// continued only with `resume`, and only when it was produced by the
    /// same settings over the same problems.
    pub fn open(cfg: RunConfig, resume: bool) -> Result<Self, OrchestratorError> {
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| OrchestratorError::Io(format!("{}: {e}", dir.display())))?;
        let lock = RunLock::acquire(&dir)?;
        let record_path = dir.join(RECORD_FILE);
        let state = RecordState::load(&record_path)?;
        let problems = load_run_problems(&cfg)?;
        let ids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
        match &state.header {
            Some(h) => {
                if !resume {
                    return Err(OrchestratorError::ResumeRequired(record_path));
                }
                if h.config.fingerprint() != cfg.fingerprint() {
                    return Err(OrchestratorError::Config(
                        "the existing record was produced with different settings".into(),
                    ));
                }
                if h.problems != ids {
                    return Err(OrchestratorError::Config(
                        "the dataset or filter selects different problems than the existing record".into(),
                    ));
                }
            }
            None if !state.calls.is_empty() || !state.verdicts.is_empty() => {
                return Err(OrchestratorError::RecordCorrupt {
                    line: 1,
                    reason: "record has events but no header".into(),
                });
            }
            None => {}
        }
        let arms = Arm::for_strategies(&cfg.strategies()?, cfg.example_io_ablation);
        let book = prompt_book(&cfg)?;
        let writer = RecordWriter::open(&record_path)?;
        let mut pipeline = Self {
            cfg,
            problems,
            arms,
            book,
            genres: MisalignedGenreSet::default(),
            record_path,
            writer,
            state,
            _lock: lock,
        };
        if pipeline.state.header.is_none() {
            let header = Event::Header(Header {
                schema_version: SCHEMA_VERSION,
                config: pipeline.cfg.clone(),
                problems: ids,
            });
            pipeline.emit(header)?;
        }
        Ok(pipeline)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn record_path(&self) -> &Path {
        &self.record_path
    }

    fn emit(&mut self, event: Event) -> Result<(), OrchestratorError> {
        self.writer.append(&event)?;
        self.state.apply(event)
    }

    /// Runs the selected stages. Stage 3 needs a working interpreter; a
    /// missing one aborts the run.
    pub fn run(&mut self, stages: StageSet, clients: &Clients) -> Result<RunSummary, OrchestratorError> {
        let mut summary = RunSummary::default();
        if stages.judge {
            // fail before paying for anything
            self.sandbox().resolve_interpreter()?;
        }
        if stages.narratives {
            let jobs = self.narrative_jobs()?;
            let new_keys: HashSet<String> = jobs.iter().map(|j| j.key.clone()).collect();
            let n = self.execute(&clients.narrative, jobs)?;
            summary.calls.insert(Stage::Narrative, n);
            self.record_variants(&new_keys)?;
        }
        if stages.solve {
            let jobs = self.solve_jobs()?;
            let n = self.execute(&clients.solve, jobs)?;
            summary.calls.insert(Stage::Solve, n);
        }
        if stages.judge {
            self.judge()?;
        }
        if stages.back_translate && stages.judge && self.cfg.back_translate {
            let mut n = self.execute(&clients.alg, self.alg_jobs(false)?)?;
            n += self.execute(&clients.alg, self.alg_jobs(true)?)?;
            summary.calls.insert(Stage::BackTranslate, n);
        }
        // tables always come from what is on disk, exactly as replay sees it
        let state = RecordState::load(&self.record_path)?;
        let data = RunData::from_record(&state)?;
        summary.failures = data.failures;
        if stages.judge {
            let tables = MetricTables::compute(&data)?;
            tables.write_to(&self.cfg.output_dir.join(METRICS_DIR))?;
            summary.tables = Some(tables);
        }
        Ok(summary)
    }

    fn narrative_jobs(&self) -> Result<Vec<Job>, OrchestratorError> {
        let counts = narrative_counts(&self.arms, &self.cfg);
        let mut jobs = Vec::new();
        for p in &self.problems {
            for &(source, count) in &counts {
                for j in 1..=count {
                    let key = narrative_key(&p.id, source, j);
                    if self.state.has_reply(&key) {
                        continue;
                    }
                    let prompt = match source {
                        NarrSource::Tagged => self.book.build_transformation_prompt(p, true)?,
                        NarrSource::NoTag => self.book.build_transformation_prompt(p, false)?,
                        NarrSource::Misaligned => {
                            let seed = derive_seed(self.cfg.seeds.misalignment, &key);
                            self.book.build_misaligned_prompt(p, &self.genres, seed)?.0
                        }
                        NarrSource::Paraphrase => self.book.build_paraphrase_prompt(p)?,
                    };
                    jobs.push(Job {
                        meta: CallMeta {
                            stage: Stage::Narrative,
                            problem_id: p.id.clone(),
                            arm: source.as_str().to_string(),
                            slot: j,
                            sample: 0,
                            retry: false,
                        },
                        request: GenerationRequest::new(RoleTag::NarrativeGen, prompt)
                            .with_temperature(self.cfg.temperatures.narrative)
                            .with_max_tokens(self.cfg.max_tokens)
                            .with_seed(derive_seed(self.cfg.seeds.sampling, &key)),
                        key,
                    });
                }
            }
        }
        Ok(jobs)
    }

    /// Appends the parsed form of every narrative reply this invocation
    /// obtained. Informational only; tables re-parse the raw replies.
    fn record_variants(&mut self, new_keys: &HashSet<String>) -> Result<(), OrchestratorError> {
        let counts = narrative_counts(&self.arms, &self.cfg);
        let mut invalid = 0;
        for p in &self.problems {
            let narr = ProblemNarratives::from_record(&self.state, &self.cfg, &p.id, &counts);
            for (source, variants) in &narr.variants {
                for v in variants {
                    if !new_keys.contains(&narrative_key(&p.id, *source, v.variant_index)) {
                        continue;
                    }
                    invalid += usize::from(!v.is_valid());
                    self.writer.append(&Event::Variant {
                        problem_id: p.id.clone(),
                        source: source.as_str().to_string(),
                        variant: NarrativeVariant {
                            raw_output: String::new(),
                            ..v.clone()
                        },
                    })?;
                }
            }
        }
        if invalid > 0 {
            log::info!("{invalid} new narratives failed the validity filter and will not be solved");
        }
        Ok(())
    }

    fn solve_jobs(&self) -> Result<Vec<Job>, OrchestratorError> {
        let counts = narrative_counts(&self.arms, &self.cfg);
        let mut jobs = Vec::new();
        for p in &self.problems {
            let narr = ProblemNarratives::from_record(&self.state, &self.cfg, &p.id, &counts);
            for arm in &self.arms {
                for slot in arm_slots(arm, &self.cfg, &p.id, &narr) {
                    let pending: Vec<usize> = (0..slot.samples)
                        .filter(|&s| !self.state.has_reply(&solve_key(&p.id, &arm.label, slot.slot, s)))
                        .collect();
                    if pending.is_empty() {
                        continue;
                    }
                    let prompt = solve_prompt(&self.book, arm, p, &slot)?;
                    for s in pending {
                        let key = solve_key(&p.id, &arm.label, slot.slot, s);
                        jobs.push(Job {
                            meta: CallMeta {
                                stage: Stage::Solve,
                                problem_id: p.id.clone(),
                                arm: arm.label.clone(),
                                slot: slot.slot,
                                sample: s,
                                retry: false,
                            },
                            request: GenerationRequest::new(RoleTag::Solver, prompt.clone())
                                .with_temperature(self.cfg.temperatures.code)
                                .with_max_tokens(self.cfg.max_tokens)
                                .with_seed(derive_seed(self.cfg.seeds.sampling, &key)),
                            key,
                        });
                    }
                }
            }
        }
        Ok(jobs)
    }

    fn sandbox(&self) -> Sandbox {
        Sandbox {
            interpreter: PathBuf::from(&self.cfg.interpreter),
            ..Sandbox::default()
        }
        .with_limits(self.cfg.limits)
        .with_exact_match(self.cfg.exact_match)
    }

    fn judge(&mut self) -> Result<(), OrchestratorError> {
        let by_id: HashMap<String, Problem> = self.problems.iter().map(|p| (p.id.clone(), p.clone())).collect();
        let mut keys = Vec::new();
        let mut candidates = Vec::new();
        for c in self.state.calls_in(Stage::Solve) {
            let Some(reply) = c.outcome.text() else { continue };
            if self.state.verdicts.get(&c.key).is_some_and(|v| v.verdict.is_some()) {
                continue;
            }
            keys.push(c.key.clone());
            candidates.push(CandidateSolution::from_reply(&c.meta.problem_id, &c.meta.arm, c.meta.sample, reply));
        }
        let runnable: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].extraction_ok).collect();
        let to_run: Vec<CandidateSolution> = runnable.iter().map(|&i| candidates[i].clone()).collect();
        log::info!("judging {} candidates ({} without code)", candidates.len(), candidates.len() - to_run.len());
        let mut results: Vec<Option<_>> = vec![None; candidates.len()];
        for (i, r) in runnable.into_iter().zip(self.sandbox().run_all(&to_run, &by_id, self.cfg.parallel_exec)) {
            results[i] = Some(r);
        }
        for (i, (key, cand)) in keys.into_iter().zip(candidates).enumerate() {
            let tests = by_id.get(&cand.problem_id).map_or(0, |p| p.all_tests().count());
            let (verdict, error) = match results[i].take() {
                None => (Some(ExecutionVerdict::not_extracted(tests)), None),
                Some(Ok(v)) => (Some(v), None),
                Some(Err(e)) => {
                    log::warn!("{key}: {e}");
                    (None, Some(e.to_string()))
                }
            };
            self.emit(Event::Verdict(VerdictEntry {
                key,
                problem_id: cand.problem_id,
                arm: cand.strategy,
                extraction_ok: cand.extraction_ok,
                code: cand.source_code,
                verdict,
                error,
            }))?;
        }
        Ok(())
    }

    fn alg_jobs(&self, retry: bool) -> Result<Vec<Job>, OrchestratorError> {
        let mut jobs = Vec::new();
        for c in self.state.calls_in(Stage::Solve) {
            let Some(v) = self.state.verdicts.get(&c.key) else { continue };
            if !v.extraction_ok || v.verdict.is_none() {
                continue;
            }
            let m = &c.meta;
            let first = alg_key(&m.problem_id, &m.arm, m.slot, m.sample, false);
            let key = if retry {
                // reprompt only when the first reply named no category
                match self.state.reply(&first) {
                    Some(r) if parse_backtranslation(r).is_none() => alg_key(&m.problem_id, &m.arm, m.slot, m.sample, true),
                    _ => continue,
                }
            } else {
                first
            };
            if self.state.has_reply(&key) {
                continue;
            }
            let prompt = self.book.build_backtranslation_prompt(&v.code, retry)?;
            jobs.push(Job {
                meta: CallMeta {
                    stage: Stage::BackTranslate,
                    retry,
                    ..m.clone()
                },
                request: GenerationRequest::new(RoleTag::BackTranslator, prompt)
                    .with_temperature(RoleTag::BackTranslator.default_temperature())
                    .with_max_tokens(self.cfg.max_tokens)
                    .with_seed(derive_seed(self.cfg.seeds.sampling, &key)),
                key,
            });
        }
        Ok(jobs)
    }

    /// Runs `jobs` through `client`, appending each call as it finishes.
    fn execute(&mut self, client: &Client, jobs: Vec<Job>) -> Result<usize, OrchestratorError> {
        if jobs.is_empty() {
            return Ok(0);
        }
        log::info!("{} calls to `{}`", jobs.len(), client.backend_id());
        let requests: Vec<GenerationRequest> = jobs.iter().map(|j| j.request.clone()).collect();
        let write_error: Mutex<Option<OrchestratorError>> = Mutex::new(None);
        let writer = &self.writer;
        let outcomes = client.generate_batch_with(&requests, self.cfg.max_in_flight, &|i, outcome| {
            let job = &jobs[i];
            let entry = CallEntry {
                key: job.key.clone(),
                meta: job.meta.clone(),
                request: job.request.clone(),
                outcome: CallOutcome::from(outcome),
            };
            if let Err(e) = writer.append(&Event::Call(entry)) {
                write_error.lock().unwrap().get_or_insert(e);
            }
        });
        if let Some(e) = write_error.into_inner().unwrap() {
            return Err(e);
        }
        let n = jobs.len();
        for (job, outcome) in jobs.into_iter().zip(outcomes) {
            if let Err(e) = &outcome {
                log::warn!("{}: {e}", job.key);
            }
            self.state.apply(Event::Call(CallEntry {
                key: job.key,
                meta: job.meta,
                request: job.request,
                outcome: CallOutcome::from(&outcome),
            }))?;
        }
        Ok(n)
    }
}

/// Call plan printed by `--dry-run`; no backend is contacted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DryRunPlan {
    pub problems: usize,
    pub narrative_calls: usize,
    pub solve_calls: usize,
    /// Upper bound: one per planned sample, reprompts not included.
    pub back_translation_calls: usize,
    /// Successful calls already in the record, per stage.
    pub recorded: BTreeMap<Stage, usize>,
}

impl DryRunPlan {
    pub fn compute(cfg: &RunConfig) -> Result<Self, OrchestratorError> {
        let problems = load_run_problems(cfg)?;
        let arms = Arm::for_strategies(&cfg.strategies()?, cfg.example_io_ablation);
        prompt_book(cfg)?;
        let per_problem_narr: usize = narrative_counts(&arms, cfg).iter().map(|(_, n)| n).sum();
        let per_problem_solve: usize = arms.iter().map(|a| a.planned_samples(cfg)).sum();
        let state = RecordState::load(&cfg.output_dir.join(RECORD_FILE))?;
        Ok(Self {
            problems: problems.len(),
            narrative_calls: problems.len() * per_problem_narr,
            solve_calls: problems.len() * per_problem_solve,
            back_translation_calls: if cfg.back_translate { problems.len() * per_problem_solve } else { 0 },
            recorded: recorded_calls(&state).into_iter().map(|(s, (ok, _))| (s, ok)).collect(),
        })
    }

    pub fn total(&self) -> usize {
        self.narrative_calls + self.solve_calls + self.back_translation_calls
    }

    pub fn render(&self) -> String {
        let done = |s: Stage| self.recorded.get(&s).copied().unwrap_or(0);
        let mut out = format!("problems: {}\n", self.problems);
        for (name, stage, n) in [
            ("narrative", Stage::Narrative, self.narrative_calls),
            ("solve", Stage::Solve, self.solve_calls),
            ("back-translation (max)", Stage::BackTranslate, self.back_translation_calls),
        ] {
            let _ = writeln!(out, "{name} calls: {n} ({} already recorded)", done(stage));
        }
        let _ = writeln!(out, "total planned calls: {}", self.total());
        out
    }
}
