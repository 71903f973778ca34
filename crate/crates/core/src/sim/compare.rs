//! Side-by-side runs of one workload under several configurations.

use super::engine::run_with;
use super::metrics::{MetricsReport, CSV_HEADER};
use super::workload::WorkloadSpec;
use crate::error::{Error, Result};
use crate::types::{EngineConfig, Strategy};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label: String,
    pub strategy: Strategy,
    pub config: EngineConfig,
}

impl RunConfig {
    pub fn new(strategy: Strategy, config: EngineConfig) -> Self {
        RunConfig { label: strategy.as_str().to_string(), strategy, config }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// One report per configuration, in input order; the first is the reference.
    pub rows: Vec<MetricsReport>,
}

/// Relative change of `value` against `reference`; zero when both are zero.
pub fn relative_delta(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(value)
        }
    } else {
        (value - reference) / reference
    }
}

impl Comparison {
    pub fn reference(&self) -> &MetricsReport {
        &self.rows[0]
    }

    /// `(ratio, executor_minutes, p95_wait)` deltas of row `i` against row 0.
    pub fn deltas(&self, i: usize) -> (f64, f64, f64) {
        let (r, m) = (self.reference(), &self.rows[i]);
        (
            relative_delta(m.builds_to_changes_ratio(), r.builds_to_changes_ratio()),
            relative_delta(m.executor_minutes, r.executor_minutes),
            relative_delta(m.p95_wait(), r.p95_wait()),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER},delta_ratio,delta_executor_minutes,delta_p95_wait\n");
        for (i, row) in self.rows.iter().enumerate() {
            let (dr, dm, dp) = self.deltas(i);
            let _ = writeln!(out, "{},{dr:.6},{dm:.6},{dp:.6}", row.csv_row());
        }
        out
    }
}

/// Runs every configuration on `workload`. With `parallel` each run gets its
/// own thread; the rows keep input order either way.
pub fn compare(workload: &WorkloadSpec, configs: &[RunConfig], parallel: bool) -> Result<Comparison> {
    if configs.len() < 2 {
        return Err(Error::InvalidConfig(format!("compare needs at least two configurations, got {}", configs.len())));
    }
    let one = |rc: &RunConfig| -> Result<MetricsReport> {
        let mut metrics = run_with(workload, rc.strategy, &rc.config)?.metrics;
        metrics.strategy = rc.label.clone();
        Ok(metrics)
    };
    let results: Vec<Result<MetricsReport>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs.iter().map(|rc| s.spawn(move || one(rc))).collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        })
    } else {
        configs.iter().map(one).collect()
    };
    Ok(Comparison { rows: results.into_iter().collect::<Result<_>>()? })
}
