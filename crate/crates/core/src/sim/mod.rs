//! Discrete-event simulation of the merge queue.

pub mod compare;
pub mod engine;
pub mod metrics;
pub mod trace;
pub mod workload;

pub use compare::{compare, Comparison, RunConfig};
pub use engine::{run, run_baseline, run_with, GroundTruth, SafetyAudit, SimEvent, SimEventKind, SimResult};
pub use metrics::MetricsReport;
pub use trace::{audit_schedule, ScheduleAudit, TraceEvent, TraceKind, TraceLog};
pub use workload::{generate_workload, standard_workload, ChangeSpec, WorkloadParams, WorkloadSpec, STANDARD_CAPACITY};
