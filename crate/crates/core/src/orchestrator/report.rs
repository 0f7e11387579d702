//! `report.md`: the metric tables laid out one row per arm, followed by any
//! analysis tables found under `analysis/`.

use std::fmt::Write as _;
use std::path::Path;

use super::tables::{fmt_opt, MetricTables, RunData};

pub const REPORT_FILE: &str = "report.md";
pub const ANALYSIS_DIR: &str = "analysis";

/// Markdown table from a TSV text with a header line.
pub fn tsv_to_markdown(tsv: &str) -> String {
    let mut lines = tsv.lines().filter(|l| !l.is_empty());
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols: Vec<&str> = header.split('\t').collect();
    let mut out = format!("| {} |\n|{}\n", cols.join(" | "), "---|".repeat(cols.len()));
    for l in lines {
        let cells: Vec<String> = l.split('\t').map(|c| c.replace('|', "\\|")).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

pub fn render(data: &RunData, tables: &MetricTables, analysis_dir: Option<&Path>) -> String {
    let mut out = String::from("# Run report\n\n");
    let _ = writeln!(
        out,
        "- benchmark: {}\n- model: {}\n- problems: {}\n",
        data.config.benchmark.as_str(),
        data.model(),
        data.problems.len()
    );

    out.push_str("## pass@k\n\n| arm |");
    for k in &data.config.ks {
        let _ = write!(out, " pass@{k} |");
    }
    out.push_str(" coverage | used samples |\n|---|");
    out.push_str(&"---|".repeat(data.config.ks.len() + 2));
    out.push('\n');
    for arm in &data.arm_data {
        let _ = write!(out, "| {} |", arm.label);
        for &k in &data.config.ks {
            let _ = write!(out, " {} |", fmt_opt(tables.pass(&arm.label, k)));
        }
        let cov = tables.coverage.iter().find(|c| c.0 == arm.label).and_then(|c| c.2);
        let used = tables.used.iter().find(|u| u.arm == arm.label).and_then(|u| u.ratio());
        let _ = writeln!(out, " {} | {} |", fmt_opt(cov), fmt_opt(used));
    }
    out.push('\n');

    for (title, file) in [
        ("Algorithm agreement", "agreement.tsv"),
        ("Error decomposition", "decomposition.tsv"),
    ] {
        if let Some(t) = tables.files.get(file) {
            let _ = writeln!(out, "## {title}\n\n{}", tsv_to_markdown(t));
        }
    }

    let f = &data.failures;
    if f.total() > 0 {
        let _ = writeln!(
            out,
            "## Incomplete items\n\n- failed backend calls: {}\n- sandbox failures: {}\n- unjudged samples: {}\n- samples without back-translation: {}\n",
            f.backend, f.sandbox, f.unjudged, f.untranslated
        );
    }

    if let Some(dir) = analysis_dir {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map(|rd| rd.filter_map(Result::ok).map(|e| e.path()).collect())
            .unwrap_or_default();
        entries.sort();
        for path in entries.into_iter().filter(|p| p.extension().is_some_and(|e| e == "tsv")) {
            let Ok(text) = std::fs::read_to_string(&path) else { continue };
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let _ = writeln!(out, "## analysis/{name}\n\n{}", tsv_to_markdown(&text));
        }
    }
    out
}
