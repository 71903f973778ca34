use crate::types::ChangeId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate change id {0}")]
    DuplicateChange(ChangeId),

    #[error("unknown change {0}")]
    UnknownChange(ChangeId),

    #[error("change {0} has already been landed or rejected")]
    AlreadyResolved(ChangeId),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid duration estimate: mean {mean}, variance {variance}")]
    InvalidEstimate { mean: f64, variance: f64 },

    #[error("cannot combine an empty list of estimates")]
    EmptyEstimates,

    #[error("predictor requires a ground-truth duration for change {0}")]
    MissingTruth(ChangeId),

    #[error("no table estimate for change {0}")]
    MissingTableEntry(ChangeId),

    #[error("build node of change {0} has no duration estimate")]
    MissingEstimate(ChangeId),

    #[error("no bypass partition for change {0}")]
    MissingPartition(ChangeId),

    #[error("base set of node for change {0} is inconsistent with its partition")]
    InconsistentBase(ChangeId),

    #[error("MAPE inputs have different lengths ({predicted} predicted, {actual} actual)")]
    LengthMismatch { predicted: usize, actual: usize },

    #[error("MAPE inputs are empty")]
    EmptyInput,

    #[error("actual value at index {0} is not strictly positive")]
    NonPositiveActual(usize),

    #[error("decision for change {0} is not terminal")]
    NotTerminal(ChangeId),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("workload parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("simulation stalled at t={time} with {pending} undecided changes")]
    Stalled { time: f64, pending: usize },
}
