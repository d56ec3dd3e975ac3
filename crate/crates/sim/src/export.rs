//! Plot-ready output files.
//!
//! Node ids in every file are 1-based, matching scenario files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::run::{PhaseDiagnostics, RunRecord};
use crate::suites::SuiteReport;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Serialize)]
struct MetricsRow {
    step: usize,
    t: f64,
    measure_s: f64,
    estimate_s: f64,
    control_s: f64,
    act_s: f64,
    estimation_consensus_residual: Option<f64>,
    estimation_constraint_violation: Option<f64>,
    control_consensus_residual: f64,
    control_constraint_violation: f64,
    mean_estimation_error: Option<f64>,
    perimeter_residual: Option<f64>,
    max_q_residual: Option<f64>,
}

#[derive(Debug, Serialize)]
struct StepDiagnostics<'a> {
    step: usize,
    estimation: Option<&'a PhaseDiagnostics>,
    control: &'a PhaseDiagnostics,
}

/// Writes `metrics.csv`, `trajectory.csv`, `diagnostics.json` and the full
/// record as `record.json` into `dir`.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics(record, dir)?;
    write_trajectory(record, dir)?;
    let diagnostics: Vec<StepDiagnostics> = record
        .steps
        .iter()
        .map(|s| StepDiagnostics { step: s.step, estimation: s.estimation.as_ref(), control: &s.control })
        .collect();
    fs::write(dir.join(DIAGNOSTICS_FILE), serde_json::to_string(&diagnostics)?)?;
    fs::write(dir.join(RECORD_FILE), serde_json::to_string(record)?)?;
    Ok(())
}

fn write_metrics(record: &RunRecord, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    for s in &record.steps {
        w.serialize(MetricsRow {
            step: s.step,
            t: s.t,
            measure_s: s.timings.measure,
            estimate_s: s.timings.estimate,
            control_s: s.timings.control,
            act_s: s.timings.act,
            estimation_consensus_residual: s.estimation.as_ref().map(|e| e.consensus_residual),
            estimation_constraint_violation: s.estimation.as_ref().map(|e| e.constraint_violation),
            control_consensus_residual: s.control.consensus_residual,
            control_constraint_violation: s.control.constraint_violation,
            mean_estimation_error: s.estimation_error,
            perimeter_residual: s.perimeter_residual,
            max_q_residual: s.max_q_residual,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One row per node per step: the position at the start of the step and the
/// velocity applied during it. A final row per node carries the end position
/// with empty velocity fields.
fn write_trajectory(record: &RunRecord, dir: &Path) -> Result<()> {
    let d = record.dim;
    let axes = ["x", "y", "z"];
    let mut w = csv::Writer::from_path(dir.join(TRAJECTORY_FILE))?;
    let mut header = vec!["step".to_string(), "node".to_string()];
    header.extend(axes.iter().take(d).map(|a| a.to_string()));
    header.extend(axes.iter().take(d).map(|a| format!("v{a}")));
    w.write_record(&header)?;
    let n = record.initial_truth.len() / d.max(1);
    let mut position = &record.initial_truth;
    for s in &record.steps {
        for p in 0..n {
            let mut row = vec![s.step.to_string(), (p + 1).to_string()];
            row.extend(position[p * d..(p + 1) * d].iter().map(|v| v.to_string()));
            row.extend(s.applied[p * d..(p + 1) * d].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        position = &s.truth;
    }
    for p in 0..n {
        let mut row = vec![record.steps.len().to_string(), (p + 1).to_string()];
        row.extend(position[p * d..(p + 1) * d].iter().map(|v| v.to_string()));
        row.extend(std::iter::repeat_n(String::new(), d));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV per table and `summary.json` into `dir`.
pub fn write_suite(report: &SuiteReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in &report.tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name)))?;
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)?)?;
    Ok(())
}
