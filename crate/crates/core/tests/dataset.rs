//! Loading and filtering benchmark dumps.

mod common;

use narrative_harness::dataset::{
    apply_filter, load_problems, load_problems_report, sample_long_subset, write_problems, DatasetFilterSpec, IoMode,
    Source,
};

#[test]
fn fixture_dump_loads_and_round_trips() {
    let path = common::fixtures_dir().join("problems.jsonl");
    let problems = load_problems(&path, Source::Custom).unwrap();
    let ids: Vec<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["he-0", "cf-1", "cf-2"]);
    assert_eq!(problems[0].io_mode, IoMode::FunctionCompletion);
    assert_eq!(problems[0].entry_point(), Some("add"));
    assert_eq!(problems[1].statement_length, "Given n, print n squared.".chars().count());
    assert_eq!(problems[1].extra["tags"], serde_json::json!(["math"]));

    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.jsonl");
    write_problems(&copy, &problems).unwrap();
    assert_eq!(load_problems(&copy, Source::Custom).unwrap(), problems);
}

#[test]
fn wrong_source_and_bad_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixed.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"id":"a","statement":"s","io_mode":"stdin_stdout","source":"code_forces"}"#,
            "\n",
            "not json\n",
            r#"{"id":"b","statement":"s","io_mode":"function_completion"}"#,
            "\n",
            r#"{"id":"c","statement":"s","io_mode":"stdin_stdout","source":"human_eval"}"#,
            "\n",
        ),
    )
    .unwrap();
    assert!(load_problems(&path, Source::CodeForces).is_err());
    let report = load_problems_report(&path, Source::CodeForces).unwrap();
    assert_eq!(report.problems.len(), 1);
    let bad: Vec<usize> = report.malformed.iter().map(|m| m.0).collect();
    assert_eq!(bad, [2, 3, 4]);
}

#[test]
fn filters_on_the_fixture() {
    let problems = load_problems(&common::fixtures_dir().join("problems.jsonl"), Source::Custom).unwrap();
    let spec = DatasetFilterSpec {
        min_rating: Some(2000),
        require_examples: true,
        ..DatasetFilterSpec::default()
    };
    let kept: Vec<String> = apply_filter(&problems, &spec).into_iter().map(|p| p.id).collect();
    assert_eq!(kept, ["cf-1"]);
    let examples_only = DatasetFilterSpec {
        require_examples: true,
        ..DatasetFilterSpec::default()
    };
    assert_eq!(apply_filter(&problems, &examples_only).len(), 2);
    assert!(sample_long_subset(&problems, 1000, 1, 0).is_err());
}

#[test]
fn real_dump_counts() {
    match common::real_dataset_counts() {
        None => eprintln!("{} not set; real benchmark counts skipped", common::DATA_ENV),
        Some(Err(e)) => panic!("{e}"),
        Some(Ok(rows)) => {
            for (label, want, got) in rows {
                assert_eq!(got, want, "{label}");
            }
        }
    }
}
