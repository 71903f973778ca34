//! Append-only event log of a simulation run, and audits over it.

use crate::speculation::{format_base, BaseSet};
use crate::types::ChangeId;
use std::fmt::{self, Write as _};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrive,
    Start,
    Abort,
    Finish,
    Land,
    Reject,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Arrive => "arrive",
            TraceKind::Start => "start",
            TraceKind::Abort => "abort",
            TraceKind::Finish => "finish",
            TraceKind::Land => "land",
            TraceKind::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub change: ChangeId,
    pub base: Option<BaseSet>,
    /// Score at schedule time, for `Start` events.
    pub p_needed: Option<f64>,
    pub mandatory: bool,
    pub detail: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = self.base.as_ref().map_or_else(|| "-".to_string(), format_base);
        write!(f, "{:.6}\t{}\t{}\t{}\t{}", self.time, self.kind.as_str(), self.change, base, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("time\tkind\tchange\tbase\tdetail\n");
        for e in &self.events {
            let _ = writeln!(out, "{e}");
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleAudit {
    /// Non-mandatory starts whose score was below the threshold.
    pub threshold_violations: Vec<String>,
    /// Instants at which more builds ran than the capacity allows.
    pub capacity_violations: Vec<String>,
    pub max_running: usize,
}

impl ScheduleAudit {
    pub fn is_clean(&self) -> bool {
        self.threshold_violations.is_empty() && self.capacity_violations.is_empty()
    }
}

/// Replays the trace, checking the threshold and capacity laws.
pub fn audit_schedule(trace: &TraceLog, threshold: f64, capacity: usize) -> ScheduleAudit {
    let mut audit = ScheduleAudit::default();
    let mut running = 0usize;
    for e in &trace.events {
        match e.kind {
            TraceKind::Start => {
                running += 1;
                let p = e.p_needed.unwrap_or(f64::NAN);
                if !e.mandatory && (p.is_nan() || p < threshold) {
                    audit.threshold_violations.push(e.to_string());
                }
                if running > capacity {
                    audit.capacity_violations.push(e.to_string());
                }
                audit.max_running = audit.max_running.max(running);
            }
            TraceKind::Abort | TraceKind::Finish => running = running.saturating_sub(1),
            _ => {}
        }
    }
    audit
}
