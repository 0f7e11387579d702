//! Scripted end-to-end runs against the mock backend.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use narrative_harness::backend::{Client, MockBackend, MockScript};
use narrative_harness::orchestrator::cli::{self, EXIT_ERROR, EXIT_OK, EXIT_PARTIAL};
use narrative_harness::orchestrator::pipeline::{Clients, DryRunPlan};
use narrative_harness::orchestrator::record::Stage;
use narrative_harness::orchestrator::{MetricTables, NarrSource, Pipeline, RecordState, RunConfig, RunData, StageSet, RECORD_FILE};

use common::expected;

fn no_env(_: &str) -> Option<String> {
    None
}

fn cli(args: &[&str]) -> i32 {
    let argv: Vec<&str> = std::iter::once("narrative-harness").chain(args.iter().copied()).collect();
    cli::run(argv, &no_env)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_files(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect()
}

pub fn check_tables(t: &MetricTables) {
    for &(arm, k, want) in expected::PASS_AT_K {
        let got = t.pass(arm, k).unwrap_or_else(|| panic!("no pass@{k} for {arm}"));
        assert!((got - want).abs() < 1e-9, "{arm} pass@{k}: {got} vs {want}");
    }
    for &(arm, want) in expected::COVERAGE {
        let got = t.coverage.iter().find(|c| c.0 == arm).and_then(|c| c.2).unwrap();
        assert!((got - want).abs() < 1e-9, "{arm} coverage: {got} vs {want}");
    }
    for &(arm, drawn, planned) in expected::USED {
        let row = t.used.iter().find(|u| u.arm == arm).unwrap();
        assert_eq!((row.drawn, row.planned), (drawn, planned), "{arm} used samples");
    }
    for &(arm, correct, matched, skipped) in expected::AGREEMENT {
        let c = &t.agreement.iter().find(|a| a.0 == arm).unwrap().1;
        assert_eq!((c.correct, c.matched, c.skipped), (correct, matched, skipped), "{arm} agreement");
    }
    let d = t.decomposition.as_ref().expect("decomposition");
    assert_eq!((d.original.as_str(), d.narrative.as_str()), ("RS", "Narr"));
    assert_eq!(d.without_samples, vec!["P4".to_string()]);
    for (s, want) in d.summaries.iter().zip(expected::DECOMPOSITION) {
        let got = (
            s.problems,
            s.excluded_trivial,
            s.correct_solution,
            s.implementation_error,
            s.wrong_algorithm,
            s.unclassified,
        );
        assert_eq!(got, want);
    }
}

#[test]
fn eval_matches_hand_traced_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_e2e(dir.path(), 4);
    assert_eq!(cli(&["eval", "--config", path(&cfg)]), EXIT_OK);

    let record = dir.path().join("run").join(RECORD_FILE);
    let data = RunData::from_record(&RecordState::load(&record).unwrap()).unwrap();
    assert_eq!(data.failures.total(), 0);
    let tables = MetricTables::compute(&data).unwrap();
    check_tables(&tables);

    let on_disk = read_dir_files(&dir.path().join("run/metrics"));
    assert_eq!(on_disk, tables.files);
    assert!(on_disk["pass_at_k.tsv"].contains("custom\tscripted\tRS\t10\t4\t0.750000\n"));
}

#[test]
fn tables_do_not_depend_on_concurrency() {
    let run = |in_flight: usize| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = common::write_e2e(dir.path(), in_flight);
        assert_eq!(cli(&["eval", "--config", path(&cfg)]), EXIT_OK);
        read_dir_files(&dir.path().join("run/metrics"))
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn dry_run_plans_without_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = common::write_e2e(dir.path(), 4);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let plan = DryRunPlan::compute(&cfg).unwrap();
    assert_eq!(plan.problems, 4);
    assert_eq!(
        (plan.narrative_calls, plan.solve_calls, plan.back_translation_calls),
        (20, 80, 80)
    );
    assert_eq!(plan.total(), 180);
    assert_eq!(cli(&["eval", "--config", path(&cfg_path), "--dry-run"]), EXIT_OK);
    assert!(!dir.path().join("run").join(RECORD_FILE).exists());
}

#[test]
fn resume_reuses_every_recorded_call() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = common::write_e2e(dir.path(), 4);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let script = MockScript::from_path(&dir.path().join("script.json")).unwrap();

    let first = Arc::new(MockBackend::new(script.clone()));
    let summary = {
        let mut p = Pipeline::open(cfg.clone(), false).unwrap();
        p.run(StageSet::EVAL, &Clients::uniform(Client::new(first.clone()))).unwrap()
    };
    assert_eq!(first.call_count(), common::E2E_CALLS);
    assert_eq!(summary.calls_made(), common::E2E_CALLS);
    assert_eq!(summary.calls[&Stage::Narrative], 20);
    assert_eq!(summary.calls[&Stage::Solve], 68);
    assert_eq!(summary.calls[&Stage::BackTranslate], 68);
    check_tables(summary.tables.as_ref().unwrap());

    // an existing record needs --resume
    assert!(Pipeline::open(cfg.clone(), false).is_err());

    let second = Arc::new(MockBackend::new(script));
    let again = {
        let mut p = Pipeline::open(cfg, true).unwrap();
        p.run(StageSet::EVAL, &Clients::uniform(Client::new(second.clone()))).unwrap()
    };
    assert_eq!(second.call_count(), 0);
    assert_eq!(again.calls_made(), 0);
    assert_eq!(again.tables, summary.tables);
}

#[test]
fn staged_commands_continue_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_e2e(dir.path(), 4);
    assert_eq!(cli(&["transform", "--config", path(&cfg)]), EXIT_OK);
    let state = RecordState::load(&dir.path().join("run").join(RECORD_FILE)).unwrap();
    assert_eq!(state.calls_in(Stage::Narrative).count(), 20);
    assert_eq!(state.calls_in(Stage::Solve).count(), 0);

    assert_eq!(cli(&["solve", "--config", path(&cfg), "--resume"]), EXIT_OK);
    assert_eq!(cli(&["eval", "--config", path(&cfg), "--resume"]), EXIT_OK);
    let data = RunData::from_record(&RecordState::load(&dir.path().join("run").join(RECORD_FILE)).unwrap()).unwrap();
    check_tables(&MetricTables::compute(&data).unwrap());
}

#[test]
fn invalid_narratives_leave_problem_without_narrative_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_e2e(dir.path(), 4);
    assert_eq!(cli(&["eval", "--config", path(&cfg)]), EXIT_OK);
    let data = RunData::from_record(&RecordState::load(&dir.path().join("run").join(RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(data.narratives["P4"].valid(NarrSource::Tagged).len(), 0);
    assert_eq!(data.narratives["P2"].valid(NarrSource::Tagged).len(), 4);
    for arm in ["NarrOnly", "NarrConcat", "Narr"] {
        assert!(data.arm(arm).unwrap().samples["P4"].is_empty(), "{arm}");
    }
    assert_eq!(data.arm("RS").unwrap().samples["P4"].len(), 10);
    let tables = MetricTables::compute(&data).unwrap();
    let per_problem = &tables.files["per_problem.tsv"];
    assert!(per_problem.contains("NarrOnly\tP4\t0\t0\t5\n"));
    // P4 is left out of the narrative means instead of counting as zero
    assert!(tables.files["pass_at_k.tsv"].contains("\tNarrOnly\t1\t3\t"));
}

#[test]
fn replay_is_byte_identical_to_golden_tables() {
    let golden_dir = common::fixtures_dir().join("golden");
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_e2e(dir.path(), 4);
    assert_eq!(cli(&["eval", "--config", path(&cfg)]), EXIT_OK);
    let record = dir.path().join("run").join(RECORD_FILE);
    let out = dir.path().join("replayed");
    assert_eq!(cli(&["replay", "--record", path(&record), "--out", path(&out)]), EXIT_OK);
    let replayed = read_dir_files(&out);
    assert_eq!(replayed, read_dir_files(&dir.path().join("run/metrics")));

    if std::env::var_os("NARRATIVE_HARNESS_BLESS").is_some() {
        std::fs::create_dir_all(&golden_dir).unwrap();
        for (name, text) in &replayed {
            std::fs::write(golden_dir.join(name), text).unwrap();
        }
    }
    assert_eq!(replayed, read_dir_files(&golden_dir), "rerun with NARRATIVE_HARNESS_BLESS=1 after intended changes");
}

#[test]
fn backend_errors_give_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_e2e(dir.path(), 4);
    // drop the P4 repeated-sampling rule: those calls hit the 400 default
    let mut script = common::e2e_script();
    script.rules.retain(|r| {
        !(r.role == Some(narrative_harness::backend::RoleTag::Solver) && r.prompt_contains.as_deref() == Some("STATEMENT-P4"))
    });
    std::fs::write(dir.path().join("script.json"), serde_json::to_string(&script).unwrap()).unwrap();
    assert_eq!(cli(&["eval", "--config", path(&cfg)]), EXIT_PARTIAL);

    let data = RunData::from_record(&RecordState::load(&dir.path().join("run").join(RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(data.failures.backend, 10);
    assert!(data.arm("RS").unwrap().samples["P4"].is_empty());
    // failed calls are not samples: P4 simply drops out of the RS means
    let tables = MetricTables::compute(&data).unwrap();
    assert!((tables.pass("RS", 10).unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn analyze_and_report_run_over_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_e2e(dir.path(), 4);
    assert_eq!(cli(&["eval", "--config", path(&cfg)]), EXIT_OK);
    let run = dir.path().join("run");

    assert_eq!(cli(&["analyze", "--config", path(&cfg), "--analyses", "agreement,decomposition"]), EXIT_OK);
    let analysis = read_dir_files(&run.join("analysis"));
    assert!(analysis.contains_key("agreement_by_category.tsv"));
    assert!(analysis.contains_key("decomposition_shares.tsv"));

    // the permuted arm was not part of this run
    assert_eq!(cli(&["analyze", "--config", path(&cfg), "--analyses", "permuted"]), EXIT_PARTIAL);
    assert_eq!(cli(&["analyze", "--config", path(&cfg), "--analyses", "bogus"]), EXIT_ERROR);

    assert_eq!(cli(&["report", "--config", path(&cfg)]), EXIT_OK);
    let report = std::fs::read_to_string(run.join("report.md")).unwrap();
    assert!(report.contains("| RS | 0.400000 | 0.688492 | 0.750000 | 0.750000 | 1.000000 |"), "{report}");
    assert!(report.contains("## analysis/agreement_by_category.tsv"));
}

#[test]
fn second_writer_is_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = common::write_e2e(dir.path(), 4);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let _held = Pipeline::open(cfg.clone(), false).unwrap();
    assert!(Pipeline::open(cfg, true).is_err());
}
