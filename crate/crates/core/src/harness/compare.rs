//! Cross-run comparison: a flat CSV of every trajectory point, and the
//! evaluations-to-target table that says which method reached a loss
//! target first and at what cost.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::record::RunRecord;

pub const CSV_HEADER: &str = "method,step,generator_calls,sgd_steps,wall_ms,L";

/// One CSV row per trajectory record across all runs.
pub fn comparison_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for run in runs {
        for r in &run.trajectory {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                run.summary.method, r.t, r.generator_calls, r.sgd_steps, r.wall_ms, r.loss
            )
            .expect("string write");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub method: String,
    pub step: usize,
    pub generator_calls: u64,
    pub sgd_steps: u64,
    pub wall_ms: u64,
    pub loss: f64,
}

/// Strict parse of the comparison CSV (used by the round-trip tests and
/// downstream tooling).
pub fn parse_comparison_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Record(format!(
                "bad csv header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Record(format!("csv line {}: bad field count", i + 2)));
        }
        let parse_err = |field: &str| Error::Record(format!("csv line {}: bad {field}", i + 2));
        rows.push(CsvRow {
            method: parts[0].to_string(),
            step: parts[1].parse().map_err(|_| parse_err("step"))?,
            generator_calls: parts[2].parse().map_err(|_| parse_err("generator_calls"))?,
            sgd_steps: parts[3].parse().map_err(|_| parse_err("sgd_steps"))?,
            wall_ms: parts[4].parse().map_err(|_| parse_err("wall_ms"))?,
            loss: parts[5].parse().map_err(|_| parse_err("loss"))?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct TargetEntry {
    pub method: String,
    /// First step whose loss reached the target, with the costs paid by
    /// then; None when the run never reached it.
    pub reached: Option<(usize, u64, u64)>,
}

/// For each run, the first trajectory point at or below `target`.
pub fn evaluations_to_target(runs: &[RunRecord], target: f64) -> Vec<TargetEntry> {
    runs.iter()
        .map(|run| {
            let reached = run
                .trajectory
                .iter()
                .find(|r| r.loss <= target)
                .map(|r| (r.t, r.generator_calls, r.sgd_steps));
            TargetEntry {
                method: run.summary.method.clone(),
                reached,
            }
        })
        .collect()
}

pub fn target_table(runs: &[RunRecord], target: f64) -> String {
    let mut out = format!("method,reached,step,generator_calls,sgd_steps (target L = {target})\n");
    for e in evaluations_to_target(runs, target) {
        match e.reached {
            Some((step, calls, sgd)) => {
                writeln!(out, "{},yes,{step},{calls},{sgd}", e.method).expect("string write")
            }
            None => writeln!(out, "{},no,,,", e.method).expect("string write"),
        }
    }
    out
}
