//! Metric tables, computed from the run record alone.
//!
//! [`RunData`] rebuilds every judged sample from the record (header config,
//! replies, verdicts, back-translations); [`MetricTables`] turns it into
//! tab-separated files with fixed row order and `{:.6}` numbers, so a replay
//! reproduces them byte for byte.
//!
//! Failed backend calls and candidates the sandbox could not run are not
//! samples: they lower the used-samples ratio instead of counting as wrong.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::config::RunConfig;
use super::plan::{
    aggregate_arms, alg_key, arm_slots, narrative_counts, solve_key, Arm, ProblemNarratives, NARR_AGGREGATE,
};
use super::record::{RecordState, Stage};
use super::OrchestratorError;
use crate::metrics::{
    agreement_counts, decompose, golden_algorithm, pass_at_k, AgreementCounts, DecompositionClass,
    DecompositionOutcome, DecompositionSummary, GoldenVote, MetricsError, SampleOutcome, SampleSet,
};
use crate::prompts::{parse_backtranslation, Category, StrategyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct JudgedSample {
    pub key: String,
    pub slot: usize,
    pub sample: usize,
    pub correct: bool,
    pub extraction_ok: bool,
    pub back_translated: Option<Category>,
    pub intended: Option<Category>,
    pub code: String,
}

impl JudgedSample {
    pub fn outcome(&self, arm: &str) -> SampleOutcome {
        SampleOutcome {
            strategy: arm.to_string(),
            correct: self.correct,
            back_translated: self.back_translated,
            extraction_ok: self.extraction_ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmData {
    pub label: String,
    /// Samples per problem when every generator output is usable.
    pub planned_per_problem: usize,
    /// Judged samples per problem id; every run problem has an entry.
    pub samples: BTreeMap<String, Vec<JudgedSample>>,
}

impl ArmData {
    pub fn sample_sets(&self) -> Vec<SampleSet> {
        self.samples
            .iter()
            .map(|(pid, s)| SampleSet::from_outcomes(pid.clone(), s.iter().map(|x| x.outcome(&self.label)).collect()))
            .collect()
    }

    /// `(problem, index) -> intended category`, aligned with [`Self::sample_sets`].
    pub fn intended(&self) -> HashMap<(String, usize), Category> {
        let mut out = HashMap::new();
        for (pid, samples) in &self.samples {
            for (i, s) in samples.iter().enumerate() {
                if let Some(c) = s.intended {
                    out.insert((pid.clone(), i), c);
                }
            }
        }
        out
    }

    pub fn drawn(&self) -> usize {
        self.samples.values().map(Vec::len).sum()
    }
}

/// Problems in the record whose latest call or verdict is a failure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FailureCounts {
    pub backend: usize,
    pub sandbox: usize,
    /// Solver replies not yet judged.
    pub unjudged: usize,
    /// Extracted samples without a parsed back-translation.
    pub untranslated: usize,
}

impl FailureCounts {
    pub fn total(&self) -> usize {
        self.backend + self.sandbox + self.unjudged + self.untranslated
    }
}

/// Everything the tables and analyses need, rebuilt from a record.
#[derive(Debug, Clone)]
pub struct RunData {
    pub config: RunConfig,
    pub problems: Vec<String>,
    pub arms: Vec<Arm>,
    /// Per-strategy arms followed by the pooled ones.
    pub arm_data: Vec<ArmData>,
    pub narratives: BTreeMap<String, ProblemNarratives>,
    pub failures: FailureCounts,
}

impl RunData {
    pub fn from_record(state: &RecordState) -> Result<Self, OrchestratorError> {
        let header = state.header()?;
        let cfg = header.config.clone();
        let arms = Arm::for_strategies(&cfg.strategies()?, cfg.example_io_ablation);
        let counts = narrative_counts(&arms, &cfg);
        let mut failures = FailureCounts {
            backend: state.calls.values().filter(|c| !c.outcome.is_ok()).count(),
            sandbox: state.verdicts.values().filter(|v| v.verdict.is_none()).count(),
            ..FailureCounts::default()
        };
        let narratives: BTreeMap<String, ProblemNarratives> = header
            .problems
            .iter()
            .map(|pid| (pid.clone(), ProblemNarratives::from_record(state, &cfg, pid, &counts)))
            .collect();

        let mut arm_data = Vec::new();
        for arm in &arms {
            let mut samples = BTreeMap::new();
            for pid in &header.problems {
                let mut judged = Vec::new();
                for slot in arm_slots(arm, &cfg, pid, &narratives[pid]) {
                    for s in 0..slot.samples {
                        let key = solve_key(pid, &arm.label, slot.slot, s);
                        if !state.has_reply(&key) {
                            continue;
                        }
                        let Some(entry) = state.verdicts.get(&key) else {
                            failures.unjudged += 1;
                            continue;
                        };
                        let Some(verdict) = &entry.verdict else { continue };
                        let back_translated = back_translation(state, pid, &arm.label, slot.slot, s);
                        if cfg.back_translate && entry.extraction_ok && back_translated.is_none() {
                            failures.untranslated += 1;
                        }
                        judged.push(JudgedSample {
                            key,
                            slot: slot.slot,
                            sample: s,
                            correct: verdict.overall_correct,
                            extraction_ok: entry.extraction_ok,
                            back_translated,
                            intended: slot.intended,
                            code: entry.code.clone(),
                        });
                    }
                }
                samples.insert(pid.clone(), judged);
            }
            arm_data.push(ArmData {
                label: arm.label.clone(),
                planned_per_problem: arm.planned_samples(&cfg),
                samples,
            });
        }
        for (label, parts) in aggregate_arms(&arms) {
            let members: Vec<&ArmData> = parts
                .iter()
                .filter_map(|p| arm_data.iter().find(|a| &a.label == p))
                .collect();
            let mut samples: BTreeMap<String, Vec<JudgedSample>> = BTreeMap::new();
            for m in &members {
                for (pid, s) in &m.samples {
                    samples.entry(pid.clone()).or_default().extend(s.iter().cloned());
                }
            }
            arm_data.push(ArmData {
                label,
                planned_per_problem: members.iter().map(|m| m.planned_per_problem).sum(),
                samples,
            });
        }
        Ok(Self {
            config: cfg,
            problems: header.problems.clone(),
            arms,
            arm_data,
            narratives,
            failures,
        })
    }

    pub fn arm(&self, label: &str) -> Option<&ArmData> {
        self.arm_data.iter().find(|a| a.label == label)
    }

    /// Solver model name as shown in tables.
    pub fn model(&self) -> String {
        match self.config.backend(&self.config.solve_backend) {
            Ok(b) if !b.model_name.is_empty() => b.model_name.clone(),
            _ => self.config.solve_backend.clone(),
        }
    }

    /// Narrative condition used against the original problem: the pooled
    /// arm when it exists, else the first plain narrative arm.
    pub fn narrative_condition(&self) -> Option<&ArmData> {
        self.arm(NARR_AGGREGATE)
            .or_else(|| self.arm(StrategyKind::NarrativeOnly.label()))
            .or_else(|| self.arm(StrategyKind::NarrativeConcat.label()))
    }
}

fn back_translation(state: &RecordState, pid: &str, arm: &str, slot: usize, sample: usize) -> Option<Category> {
    [false, true]
        .into_iter()
        .find_map(|retry| state.reply(&alg_key(pid, arm, slot, sample, retry)).and_then(parse_backtranslation))
}

/// Mean pass@k over problems with at least one sample, with `k` capped at
/// each problem's sample count. `None` when no problem has samples.
pub fn mean_capped_pass_at_k(arm: &ArmData, k: usize) -> Result<(usize, Option<f64>), MetricsError> {
    let mut total = 0.0;
    let mut problems = 0;
    for s in arm.samples.values() {
        let n = s.len();
        if n == 0 {
            continue;
        }
        let c = s.iter().filter(|x| x.correct).count();
        total += pass_at_k(n, c, k.min(n))?;
        problems += 1;
    }
    Ok((problems, (problems > 0).then(|| total / problems as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassRow {
    pub arm: String,
    pub k: usize,
    pub problems: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsedRow {
    pub arm: String,
    pub drawn: usize,
    pub planned: usize,
    pub problems_without_samples: usize,
}

impl UsedRow {
    pub fn ratio(&self) -> Option<f64> {
        (self.planned > 0).then(|| self.drawn as f64 / self.planned as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionProblem {
    pub problem_id: String,
    pub golden: Option<GoldenVote>,
    pub result: Result<[DecompositionOutcome; 2], MetricsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub original: String,
    pub narrative: String,
    pub problems: Vec<DecompositionProblem>,
    /// Problems lacking samples under either condition.
    pub without_samples: Vec<String>,
    pub summaries: [DecompositionSummary; 2],
}

/// Original-vs-narrative error decomposition; `None` when back-translation
/// is off or either condition is missing.
pub fn decomposition(data: &RunData) -> Option<DecompositionReport> {
    if !data.config.back_translate {
        return None;
    }
    let original = data.arm(StrategyKind::RepeatedSampling.label())?;
    let narrative = data.narrative_condition()?;
    let mut problems = Vec::new();
    let mut without_samples = Vec::new();
    for pid in &data.problems {
        let (o, n) = (&original.samples[pid], &narrative.samples[pid]);
        if o.is_empty() || n.is_empty() {
            without_samples.push(pid.clone());
            continue;
        }
        let cats: Vec<Category> = o
            .iter()
            .chain(n.iter())
            .filter(|s| s.correct)
            .filter_map(|s| s.back_translated)
            .collect();
        let golden = golden_algorithm(&cats);
        let outcomes = |v: &[JudgedSample], arm: &str| v.iter().map(|s| s.outcome(arm)).collect::<Vec<_>>();
        let result = decompose(
            pid,
            &outcomes(o, &original.label),
            &outcomes(n, &narrative.label),
            golden.map(|g| g.category),
        );
        problems.push(DecompositionProblem {
            problem_id: pid.clone(),
            golden,
            result,
        });
    }
    let ok: Vec<&[DecompositionOutcome; 2]> = problems.iter().filter_map(|p| p.result.as_ref().ok()).collect();
    let summaries = [
        DecompositionSummary::aggregate(ok.iter().map(|o| &o[0])),
        DecompositionSummary::aggregate(ok.iter().map(|o| &o[1])),
    ];
    Some(DecompositionReport {
        original: original.label.clone(),
        narrative: narrative.label.clone(),
        problems,
        without_samples,
        summaries,
    })
}

/// The metric tables of one run, both as rows and as rendered files.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTables {
    pub pass_at_k: Vec<PassRow>,
    /// `(arm, problems, coverage)`.
    pub coverage: Vec<(String, usize, Option<f64>)>,
    pub used: Vec<UsedRow>,
    /// `(arm, counts)`; empty when back-translation is off.
    pub agreement: Vec<(String, AgreementCounts)>,
    pub decomposition: Option<DecompositionReport>,
    /// File name -> contents.
    pub files: BTreeMap<String, String>,
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn cat_name(c: Option<Category>) -> &'static str {
    c.map_or("NA", Category::name)
}

impl MetricTables {
    pub fn compute(data: &RunData) -> Result<Self, OrchestratorError> {
        let metrics_err = |e: MetricsError| OrchestratorError::Io(format!("metric computation: {e}"));
        let benchmark = data.config.benchmark.as_str();
        let model = data.model();
        let mut files = BTreeMap::new();

        let mut pass_rows = Vec::new();
        let mut t = String::from("benchmark\tmodel\tarm\tk\tproblems\tpass_at_k\n");
        for arm in &data.arm_data {
            for &k in &data.config.ks {
                let (problems, value) = mean_capped_pass_at_k(arm, k).map_err(metrics_err)?;
                let _ = writeln!(t, "{benchmark}\t{model}\t{}\t{k}\t{problems}\t{}", arm.label, fmt_opt(value));
                pass_rows.push(PassRow {
                    arm: arm.label.clone(),
                    k,
                    problems,
                    value,
                });
            }
        }
        files.insert("pass_at_k.tsv".to_string(), t);

        let mut coverage = Vec::new();
        let mut t = String::from("benchmark\tmodel\tarm\tproblems\tcoverage\n");
        for arm in &data.arm_data {
            let with: Vec<&Vec<JudgedSample>> = arm.samples.values().filter(|s| !s.is_empty()).collect();
            let value = (!with.is_empty())
                .then(|| with.iter().filter(|s| s.iter().any(|x| x.correct)).count() as f64 / with.len() as f64);
            let _ = writeln!(t, "{benchmark}\t{model}\t{}\t{}\t{}", arm.label, with.len(), fmt_opt(value));
            coverage.push((arm.label.clone(), with.len(), value));
        }
        files.insert("coverage.tsv".to_string(), t);

        let mut used = Vec::new();
        let mut t = String::from("arm\tdrawn\tplanned\tratio\tproblems_without_samples\n");
        for arm in &data.arm_data {
            let row = UsedRow {
                arm: arm.label.clone(),
                drawn: arm.drawn(),
                planned: arm.planned_per_problem * data.problems.len(),
                problems_without_samples: arm.samples.values().filter(|s| s.is_empty()).count(),
            };
            let _ = writeln!(
                t,
                "{}\t{}\t{}\t{}\t{}",
                row.arm,
                row.drawn,
                row.planned,
                fmt_opt(row.ratio()),
                row.problems_without_samples
            );
            used.push(row);
        }
        files.insert("used_samples.tsv".to_string(), t);

        let mut t = String::from("arm\tproblem_id\tn\tc\tplanned\n");
        for arm in &data.arm_data {
            for (pid, s) in &arm.samples {
                let c = s.iter().filter(|x| x.correct).count();
                let _ = writeln!(t, "{}\t{pid}\t{}\t{c}\t{}", arm.label, s.len(), arm.planned_per_problem);
            }
        }
        files.insert("per_problem.tsv".to_string(), t);

        let mut agreement = Vec::new();
        if data.config.back_translate {
            let mut t = String::from("arm\tcorrect\tmatched\tskipped\tratio\tnote\n");
            for arm in &data.arm_data {
                let counts = agreement_counts(&arm.sample_sets(), &arm.intended());
                let (ratio, note) = match counts.ratio() {
                    Ok(r) => (format!("{r:.6}"), String::new()),
                    Err(e) => ("NA".to_string(), e.to_string()),
                };
                let _ = writeln!(
                    t,
                    "{}\t{}\t{}\t{}\t{ratio}\t{note}",
                    arm.label, counts.correct, counts.matched, counts.skipped
                );
                agreement.push((arm.label.clone(), counts));
            }
            files.insert("agreement.tsv".to_string(), t);
        }

        let decomposition = decomposition(data);
        if let Some(d) = &decomposition {
            files.insert("decomposition.tsv".to_string(), render_decomposition(d));
            files.insert("decomposition_problems.tsv".to_string(), render_decomposition_problems(d));
        }

        Ok(Self {
            pass_at_k: pass_rows,
            coverage,
            used,
            agreement,
            decomposition,
            files,
        })
    }

    pub fn pass(&self, arm: &str, k: usize) -> Option<f64> {
        self.pass_at_k
            .iter()
            .find(|r| r.arm == arm && r.k == k)
            .and_then(|r| r.value)
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), OrchestratorError> {
        std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::Io(format!("{}: {e}", dir.display())))?;
        for (name, text) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

const CLASSES: [DecompositionClass; 3] = [
    DecompositionClass::CorrectSolution,
    DecompositionClass::ImplementationError,
    DecompositionClass::WrongAlgorithm,
];

fn render_decomposition(d: &DecompositionReport) -> String {
    let mut t = String::from(
        "condition\tarm\tproblems\texcluded_trivial\tcorrect_solution\timplementation_error\twrong_algorithm\tunclassified\tcorrect_share\timplementation_share\twrong_algorithm_share\n",
    );
    for (condition, arm, s) in [
        ("original", &d.original, &d.summaries[0]),
        ("narrative", &d.narrative, &d.summaries[1]),
    ] {
        let _ = write!(
            t,
            "{condition}\t{arm}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.problems, s.excluded_trivial, s.correct_solution, s.implementation_error, s.wrong_algorithm, s.unclassified
        );
        for class in CLASSES {
            let _ = write!(t, "\t{}", fmt_opt(s.ratio(class)));
        }
        t.push('\n');
    }
    t
}

fn render_decomposition_problems(d: &DecompositionReport) -> String {
    let mut t = String::from(
        "problem_id\tgolden\tvotes\ttie\texcluded_trivial\toriginal_cs\toriginal_ie\toriginal_wa\toriginal_unclassified\tnarrative_cs\tnarrative_ie\tnarrative_wa\tnarrative_unclassified\terror\n",
    );
    for p in &d.problems {
        let (votes, tie) = p.golden.map_or((0, false), |g| (g.votes, g.tie));
        let _ = write!(t, "{}\t{}\t{votes}\t{tie}", p.problem_id, cat_name(p.golden.map(|g| g.category)));
        match &p.result {
            Ok([o, n]) => {
                let _ = write!(t, "\t{}", o.excluded_trivial);
                for x in [o, n] {
                    let _ = write!(
                        t,
                        "\t{}\t{}\t{}\t{}",
                        x.correct_solution, x.implementation_error, x.wrong_algorithm, x.unclassified
                    );
                }
                t.push_str("\t\n");
            }
            Err(e) => {
                let _ = writeln!(t, "\tNA{}\t{e}", "\tNA".repeat(8));
            }
        }
    }
    for pid in &d.without_samples {
        let _ = writeln!(t, "{pid}\tNA\t0\tfalse\tNA{}\tno samples under one condition", "\tNA".repeat(8));
    }
    t
}

/// Per-stage call counts, used by `--dry-run` and the run summary.
pub fn recorded_calls(state: &RecordState) -> BTreeMap<Stage, (usize, usize)> {
    let mut out: BTreeMap<Stage, (usize, usize)> = BTreeMap::new();
    for c in state.calls.values() {
        let e = out.entry(c.meta.stage).or_default();
        if c.outcome.is_ok() {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    out
}
