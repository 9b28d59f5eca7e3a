//! Reading finished runs back and rendering tables.

use std::fmt::Write as _;
use std::fs;

use thiserror::Error;

use super::evaluate::EvaluationReport;
use super::rundir::{RunDir, RunSummary, SUMMARY};
use crate::microworld::TaskFamily;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run {run} is incomplete: {missing}")]
    IncompleteRun { run: String, missing: String },
    #[error("reading {path}: {message}")]
    Read { path: String, message: String },
}

fn read<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T, ReportError> {
    let err = |message: String| ReportError::Read {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Summary plus every evaluation report of a finished run, in stage order.
pub fn load_reports(run: &RunDir) -> Result<(RunSummary, Vec<EvaluationReport>), ReportError> {
    let name = run.root().display().to_string();
    let summary_path = run.path(SUMMARY);
    if !summary_path.is_file() {
        return Err(ReportError::IncompleteRun {
            run: name,
            missing: format!("no {SUMMARY}; the run did not finish"),
        });
    }
    let summary: RunSummary = read(&summary_path)?;
    let mut reports = Vec::new();
    for stage in &summary.evaluated_stages {
        let path = run.report_path(*stage);
        if !path.is_file() {
            return Err(ReportError::IncompleteRun {
                run: name,
                missing: format!("report for stage {stage}"),
            });
        }
        reports.push(read(&path)?);
    }
    Ok((summary, reports))
}

fn rate(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".to_string())
}

/// Plain-text per-stage table.
pub fn stage_table(reports: &[EvaluationReport]) -> String {
    let mut out = format!("{:>5} {:>7} {:>9} {:>6}", "stage", "version", "successes", "rate");
    for f in TaskFamily::ALL {
        let _ = write!(out, " {:>9}", f.as_str());
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{:>5} {:>7} {:>9} {:>6}",
            r.stage,
            r.skill_version,
            format!("{}/{}", r.successes, r.episodes),
            rate(r.rate)
        );
        for f in TaskFamily::ALL {
            let _ = write!(out, " {:>9}", rate(r.per_family.get(&f).and_then(|c| c.rate())));
        }
        out.push('\n');
    }
    out
}

/// One row per run, highest final success rate first.
pub fn ablation_table(runs: &[RunSummary]) -> String {
    let mut rows: Vec<&RunSummary> = runs.iter().collect();
    rows.sort_by(|a, b| {
        b.final_rate
            .unwrap_or(-1.0)
            .total_cmp(&a.final_rate.unwrap_or(-1.0))
            .then_with(|| a.mode.cmp(&b.mode))
            .then_with(|| a.master_seed.cmp(&b.master_seed))
    });
    let mut out = format!(
        "{:<14} {:>6} {:>9} {:>8} {:>8} {:>6}\n",
        "mode", "seed", "revisions", "initial", "final", "delta"
    );
    for s in rows {
        let delta = match (s.initial_rate, s.final_rate) {
            (Some(i), Some(f)) => format!("{:+.3}", f - i),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>9} {:>8} {:>8} {:>6}",
            s.mode,
            s.master_seed,
            s.revisions,
            rate(s.initial_rate),
            rate(s.final_rate),
            delta
        );
    }
    out
}
