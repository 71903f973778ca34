//! Speculative merge-queue scheduling.
//!
//! Pending changes are expanded into a speculation forest of builds against
//! hypothetical bases, each build is scored by the probability that its
//! result will be needed, and a selector runs the most useful builds within
//! a fixed executor budget. Changes whose builds agree across every base may
//! land before slower conflicting predecessors. [`sim`] replays synthetic
//! workloads through the whole pipeline in virtual time.

pub mod completion;
pub mod conflict;
pub mod error;
pub mod prediction;
pub mod prioritization;
pub mod selection;
pub mod sim;
pub mod speculation;
pub mod types;

pub use error::{Error, Result};
pub use types::{BuildOutcome, Change, ChangeId, EngineConfig, Strategy};
