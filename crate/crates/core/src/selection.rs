//! Selector: which builds run, and when a change can land or be rejected.

use crate::error::{Error, Result};
use crate::prioritization::{BypassPartition, RankedBuild};
use crate::speculation::{MainlineState, NodeKey, SpeculationForest};
use crate::types::{BuildOutcome, ChangeId, EngineConfig};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleAction {
    pub to_start: Vec<NodeKey>,
    pub to_abort: Vec<NodeKey>,
    pub to_keep: Vec<NodeKey>,
}

/// Takes the highest-ranked candidates up to the executor capacity.
///
/// Candidates are nodes scoring at least `threshold` plus every mandatory
/// head node. Running nodes outside the taken set are aborted.
pub fn select_builds(
    ranked: &[RankedBuild],
    running: &BTreeSet<NodeKey>,
    threshold: f64,
    cfg: &EngineConfig,
) -> ScheduleAction {
    let mut action = ScheduleAction::default();
    let mut taken = BTreeSet::new();
    for r in ranked {
        if taken.len() == cfg.executor_capacity {
            break;
        }
        if r.mandatory || r.p_needed >= threshold {
            taken.insert(&r.key);
            if running.contains(&r.key) {
                action.to_keep.push(r.key.clone());
            } else {
                action.to_start.push(r.key.clone());
            }
        }
    }
    action.to_abort = running.iter().filter(|k| !taken.contains(k)).cloned().collect();
    action
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitReason {
    BuildsOutstanding,
    OutcomesInconsistent,
    BlockedByPredecessor,
}

impl WaitReason {
    pub fn as_str(self) -> &'static str {
        match self {
            WaitReason::BuildsOutstanding => "builds-outstanding",
            WaitReason::OutcomesInconsistent => "outcomes-inconsistent",
            WaitReason::BlockedByPredecessor => "blocked-by-predecessor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Land { change: ChangeId, via_bypass: bool },
    Reject { change: ChangeId, via_bypass: bool, failing_node: NodeKey },
    Wait { change: ChangeId, reason: WaitReason },
}

impl Decision {
    pub fn change(&self) -> ChangeId {
        match self {
            Decision::Land { change, .. } | Decision::Reject { change, .. } | Decision::Wait { change, .. } => *change,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, Decision::Wait { .. })
    }

    pub fn via_bypass(&self) -> bool {
        matches!(self, Decision::Land { via_bypass: true, .. } | Decision::Reject { via_bypass: true, .. })
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Land { change, via_bypass } => write!(f, "land {change} bypass={via_bypass}"),
            Decision::Reject { change, via_bypass, failing_node } => {
                write!(f, "reject {change} bypass={via_bypass} node={failing_node}")
            }
            Decision::Wait { change, reason } => write!(f, "wait {change} {}", reason.as_str()),
        }
    }
}

/// Decides the fate of pending change `c`.
///
/// A change without unresolved conflicting predecessors follows its single
/// build. A change with predecessors may bypass them when `allow_bypass` is
/// set, none of them lies beyond the depth cap, and every one of its
/// speculative builds completed with the same outcome.
pub fn decide_change(
    c: ChangeId,
    forest: &SpeculationForest,
    part: &BypassPartition,
    allow_bypass: bool,
) -> Result<Decision> {
    let preds = forest.predecessors(c)?;
    let nodes = forest.nodes_for_change(c)?;
    let wait = |reason| Ok(Decision::Wait { change: c, reason });

    if preds.is_empty() {
        let Some(node) = nodes.iter().find(|n| n.base.is_empty()) else {
            return wait(WaitReason::BuildsOutstanding);
        };
        return Ok(match node.outcome() {
            Some(BuildOutcome::Pass) => Decision::Land { change: c, via_bypass: false },
            Some(BuildOutcome::Fail) => Decision::Reject { change: c, via_bypass: false, failing_node: node.key() },
            None => Decision::Wait { change: c, reason: WaitReason::BuildsOutstanding },
        });
    }

    if !allow_bypass || !preds.far.is_empty() || part.change != c {
        return wait(WaitReason::BlockedByPredecessor);
    }
    let complete = nodes.len() == 1usize << preds.near.len();
    let outcomes: Vec<Option<BuildOutcome>> = nodes.iter().map(|n| n.outcome()).collect();
    if complete && outcomes.iter().all(Option::is_some) {
        let first = outcomes[0];
        if outcomes.iter().all(|o| *o == first) {
            return Ok(match first {
                Some(BuildOutcome::Pass) => Decision::Land { change: c, via_bypass: true },
                _ => Decision::Reject { change: c, via_bypass: true, failing_node: nodes[0].key() },
            });
        }
        return wait(WaitReason::OutcomesInconsistent);
    }
    if nodes.iter().any(|n| n.is_running()) {
        wait(WaitReason::BuildsOutstanding)
    } else {
        wait(WaitReason::BlockedByPredecessor)
    }
}

/// Applies a terminal decision to the mainline and the forest. Returns the
/// nodes removed from the forest so the caller can abort running ones.
pub fn commit(
    mainline: &mut MainlineState,
    decision: &Decision,
    forest: &mut SpeculationForest,
) -> Result<Vec<crate::speculation::BuildNode>> {
    let c = decision.change();
    if mainline.contains(c) || forest.is_resolved(c) {
        return Err(Error::AlreadyResolved(c));
    }
    match decision {
        Decision::Land { .. } => {
            let dropped = forest.resolve_change(c, true)?;
            mainline.land(c);
            Ok(dropped)
        }
        Decision::Reject { .. } => forest.resolve_change(c, false),
        Decision::Wait { .. } => Ok(Vec::new()),
    }
}
