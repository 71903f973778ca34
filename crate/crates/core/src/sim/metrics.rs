//! Run metrics and their CSV export.

use std::fmt::Write as _;

/// Nearest-rank percentile of `values`; `0` for an empty slice.
pub fn nearest_rank(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub strategy: String,
    pub builds_started: usize,
    pub builds_completed: usize,
    pub changes_decided: usize,
    pub landed: usize,
    pub rejected: usize,
    pub executor_minutes: f64,
    /// Arrival to decision, per decided change, in decision order.
    pub waiting_times: Vec<f64>,
    /// Last own build completion to decision.
    pub post_build_waits: Vec<f64>,
    /// Waits of short changes queued behind a pending conflicting change
    /// at least twice as long.
    pub short_behind_long_waits: Vec<f64>,
    pub waited_due_to_conflicts: usize,
    pub bypass_count: usize,
    pub abort_count: usize,
}

pub const CSV_HEADER: &str =
    "strategy,builds_started,changes_decided,ratio,executor_minutes,p50_wait,p95_wait,blrd_rate,conflict_rate,aborts";

impl MetricsReport {
    pub fn builds_to_changes_ratio(&self) -> f64 {
        if self.changes_decided == 0 {
            0.0
        } else {
            self.builds_started as f64 / self.changes_decided as f64
        }
    }

    pub fn p50_wait(&self) -> f64 {
        nearest_rank(&self.waiting_times, 50.0)
    }

    pub fn p95_wait(&self) -> f64 {
        nearest_rank(&self.waiting_times, 95.0)
    }

    pub fn p95_post_build_wait(&self) -> f64 {
        nearest_rank(&self.post_build_waits, 95.0)
    }

    pub fn p95_short_behind_long(&self) -> f64 {
        nearest_rank(&self.short_behind_long_waits, 95.0)
    }

    /// Bypassed changes per change that had to wait on a conflict, in percent.
    pub fn blrd_trigger_rate(&self) -> f64 {
        percent(self.bypass_count, self.waited_due_to_conflicts)
    }

    /// Changes that waited on a conflict per decided change, in percent.
    pub fn conflict_rate(&self) -> f64 {
        percent(self.waited_due_to_conflicts, self.changes_decided)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.strategy,
            self.builds_started,
            self.changes_decided,
            self.builds_to_changes_ratio(),
            self.executor_minutes,
            self.p50_wait(),
            self.p95_wait(),
            self.blrd_trigger_rate(),
            self.conflict_rate(),
            self.abort_count
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "strategy            {}", self.strategy);
        let _ = writeln!(out, "changes decided     {} ({} landed, {} rejected)", self.changes_decided, self.landed, self.rejected);
        let _ = writeln!(out, "builds started      {} ({} aborted)", self.builds_started, self.abort_count);
        let _ = writeln!(out, "builds/changes      {:.3}", self.builds_to_changes_ratio());
        let _ = writeln!(out, "executor minutes    {:.1}", self.executor_minutes);
        let _ = writeln!(out, "wait P50 / P95      {:.2} / {:.2} min", self.p50_wait(), self.p95_wait());
        let _ = writeln!(out, "post-build wait P95 {:.2} min", self.p95_post_build_wait());
        let _ = writeln!(out, "BLRD trigger rate   {:.2}%", self.blrd_trigger_rate());
        let _ = writeln!(out, "conflict rate       {:.2}%", self.conflict_rate());
        out
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0), 19.0);
        assert_eq!(nearest_rank(&v, 50.0), 10.0);
        assert_eq!(nearest_rank(&v, 100.0), 20.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&[7.0], 95.0), 7.0);
        assert_eq!(nearest_rank(&[], 95.0), 0.0);
        assert_eq!(nearest_rank(&[3.0, 1.0, 2.0], 50.0), 2.0);
    }

    #[test]
    fn rates_and_ratio() {
        let m = MetricsReport {
            builds_started: 30,
            changes_decided: 20,
            waited_due_to_conflicts: 8,
            bypass_count: 2,
            ..Default::default()
        };
        assert_eq!(m.builds_to_changes_ratio(), 1.5);
        assert_eq!(m.blrd_trigger_rate(), 25.0);
        assert_eq!(m.conflict_rate(), 40.0);
        assert_eq!(MetricsReport::default().builds_to_changes_ratio(), 0.0);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let m = MetricsReport { strategy: "enhanced".into(), builds_started: 1, changes_decided: 1, ..Default::default() };
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), 10);
        assert!(lines[1].starts_with("enhanced,1,1,1.000000,"));
    }
}
