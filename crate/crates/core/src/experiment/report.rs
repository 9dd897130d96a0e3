//! Cross-run comparison tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{Method, Planner};
use super::evaluate::load_eval_rows;
use super::run::RunRecord;
use crate::error::{Error, Result};
use crate::math::mean_ci95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub task: String,
    pub planner: Planner,
    pub lambda: f64,
    pub mean_true: f64,
    pub ci95_true: f64,
    pub mean_predicted: f64,
    /// `mean_predicted - mean_true`.
    pub exploitation_gap: f64,
}

/// (task, method, planner, lambda bits)
type GroupKey = (String, Method, Planner, u64);

/// Checks that every method present spent the same total number of
/// pretraining environment steps.
pub fn check_fair_budget(records: &[RunRecord]) -> Result<()> {
    let mut totals: BTreeMap<Method, u64> = BTreeMap::new();
    for r in records {
        *totals.entry(r.method).or_default() += r.env_steps;
    }
    let mut values = totals.values();
    if let Some(first) = values.next() {
        if values.any(|v| v != first) {
            let detail: Vec<String> = totals.iter().map(|(m, s)| format!("{m}={s}")).collect();
            return Err(Error::Audit(format!("unequal pretraining budgets: {}", detail.join(", "))));
        }
    }
    Ok(())
}

/// Aggregates the evaluation rows of `run_dirs`, one row per
/// (task, method, planner, lambda), sorted by task then method.
pub fn build_report(run_dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut records = Vec::with_capacity(run_dirs.len());
    // (true, predicted) returns per group
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for dir in run_dirs {
        records.push(RunRecord::load(dir)?);
        for row in load_eval_rows(dir)? {
            // non-negative floats order like their bit patterns
            let entry = groups.entry((row.task, row.method, row.planner, row.lambda.to_bits())).or_default();
            entry.0.push(row.true_return);
            entry.1.push(row.predicted_return);
        }
    }
    check_fair_budget(&records)?;
    Ok(groups
        .into_iter()
        .map(|((task, method, planner, bits), (truth, pred))| {
            let (mean_true, ci95_true) = mean_ci95(&truth);
            let mean_predicted = pred.iter().sum::<f64>() / pred.len() as f64;
            ReportRow {
                method,
                task,
                planner,
                lambda: f64::from_bits(bits),
                mean_true,
                ci95_true,
                mean_predicted,
                exploitation_gap: mean_predicted - mean_true,
            }
        })
        .collect())
}

pub fn write_csv(rows: &[ReportRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
