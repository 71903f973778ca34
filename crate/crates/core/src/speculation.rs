//! Speculation forest over the pending queue.
//!
//! Every pending change gets one build node per subset of its unresolved
//! conflicting predecessors: the subset is the *base*, i.e. the predecessors
//! assumed to have landed when the build runs. Non-conflicting predecessors
//! never appear in a base, which merges all speculation paths that differ only
//! by an independent change. Only the `depth_cap` nearest conflicting
//! predecessors are speculated on; farther ones are assumed not landed and the
//! change cannot bypass them.

use crate::conflict::{connected_components, ConflictGraph};
use crate::error::{Error, Result};
use crate::prediction::DurationEstimate;
use crate::types::{BuildOutcome, ChangeId, EngineConfig};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type BaseSet = BTreeSet<ChangeId>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub change: ChangeId,
    pub base: BaseSet,
}

impl NodeKey {
    pub fn new(change: ChangeId, base: impl IntoIterator<Item = ChangeId>) -> Self {
        NodeKey { change, base: base.into_iter().collect() }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.change, format_base(&self.base))
    }
}

/// Renders a base set as `{1,2}`; the empty base is `{}`.
pub fn format_base(base: &BaseSet) -> String {
    let inner: Vec<String> = base.iter().map(ToString::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeState {
    Pending,
    Running { started_at: f64, run: u64 },
    Completed { outcome: BuildOutcome, finished_at: f64 },
    Aborted { aborted_at: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildNode {
    pub change: ChangeId,
    pub base: BaseSet,
    pub state: NodeState,
    pub estimate: Option<DurationEstimate>,
}

impl BuildNode {
    pub fn new(change: ChangeId, base: BaseSet) -> Self {
        BuildNode { change, base, state: NodeState::Pending, estimate: None }
    }

    pub fn key(&self) -> NodeKey {
        NodeKey { change: self.change, base: self.base.clone() }
    }

    pub fn is_running(&self) -> bool {
        matches!(self.state, NodeState::Running { .. })
    }

    /// Pending, aborted and running nodes compete for executors.
    pub fn is_outstanding(&self) -> bool {
        !matches!(self.state, NodeState::Completed { .. })
    }

    pub fn outcome(&self) -> Option<BuildOutcome> {
        match self.state {
            NodeState::Completed { outcome, .. } => Some(outcome),
            _ => None,
        }
    }
}

/// Conflicting predecessors of one change, in queue order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predecessors {
    /// The speculated predecessors (at most `depth_cap`, nearest to the change).
    pub near: Vec<ChangeId>,
    /// Conflicting predecessors beyond the depth cap.
    pub far: Vec<ChangeId>,
}

impl Predecessors {
    pub fn all(&self) -> impl Iterator<Item = ChangeId> + '_ {
        self.far.iter().chain(&self.near).copied()
    }

    pub fn len(&self) -> usize {
        self.near.len() + self.far.len()
    }

    pub fn is_empty(&self) -> bool {
        self.near.is_empty() && self.far.is_empty()
    }

    pub fn contains(&self, id: ChangeId) -> bool {
        self.near.contains(&id) || self.far.contains(&id)
    }
}

/// The head revision and everything landed on top of it during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MainlineState {
    pub landed: Vec<ChangeId>,
    pub head_label: String,
}

impl MainlineState {
    pub fn new() -> Self {
        MainlineState { landed: Vec::new(), head_label: revision_label(0xcbf2_9ce4_8422_2325) }
    }

    pub fn land(&mut self, id: ChangeId) {
        self.landed.push(id);
        let mut h = u64::from_str_radix(&self.head_label, 16).unwrap_or(0xcbf2_9ce4_8422_2325);
        for b in id.0.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.head_label = revision_label(h);
    }

    pub fn contains(&self, id: ChangeId) -> bool {
        self.landed.contains(&id)
    }
}

fn revision_label(h: u64) -> String {
    format!("{h:016x}")
}

#[derive(Debug, Clone, Default)]
pub struct SpeculationForest {
    queue: Vec<ChangeId>,
    graph: ConflictGraph,
    components: Vec<Vec<ChangeId>>,
    preds: BTreeMap<ChangeId, Predecessors>,
    nodes: BTreeMap<ChangeId, BTreeMap<BaseSet, BuildNode>>,
    resolved: BTreeSet<ChangeId>,
}

/// Builds the forest for `queue` from scratch; every node starts `Pending`.
pub fn enumerate_forest(queue: &[ChangeId], graph: &ConflictGraph, cfg: &EngineConfig) -> SpeculationForest {
    let preds = predecessor_lists(queue, graph, cfg);
    let nodes = preds.iter().map(|(&c, p)| (c, speculate(c, p))).collect();
    SpeculationForest {
        queue: queue.to_vec(),
        graph: graph.clone(),
        components: connected_components(graph, queue),
        preds,
        nodes,
        resolved: BTreeSet::new(),
    }
}

fn predecessor_lists(queue: &[ChangeId], graph: &ConflictGraph, cfg: &EngineConfig) -> BTreeMap<ChangeId, Predecessors> {
    let position: BTreeMap<ChangeId, usize> = queue.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut preds = BTreeMap::new();
    for (pos, &c) in queue.iter().enumerate() {
        let mut ahead: Vec<(usize, ChangeId)> = graph
            .neighbors(c)
            .filter_map(|p| position.get(&p).filter(|&&i| i < pos).map(|&i| (i, p)))
            .collect();
        ahead.sort_unstable();
        let ahead: Vec<ChangeId> = ahead.into_iter().map(|(_, p)| p).collect();
        let split = ahead.len().saturating_sub(cfg.depth_cap);
        preds.insert(c, Predecessors { far: ahead[..split].to_vec(), near: ahead[split..].to_vec() });
    }
    preds
}

/// One pending node per subset of the near predecessors.
fn speculate(c: ChangeId, p: &Predecessors) -> BTreeMap<BaseSet, BuildNode> {
    (0u64..(1u64 << p.near.len()))
        .map(|mask| {
            let base: BaseSet =
                p.near.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &id)| id).collect();
            (base.clone(), BuildNode::new(c, base))
        })
        .collect()
}

impl SpeculationForest {
    pub fn queue(&self) -> &[ChangeId] {
        &self.queue
    }

    pub fn graph(&self) -> &ConflictGraph {
        &self.graph
    }

    pub fn components(&self) -> &[Vec<ChangeId>] {
        &self.components
    }

    pub fn is_pending(&self, id: ChangeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn is_resolved(&self, id: ChangeId) -> bool {
        self.resolved.contains(&id)
    }

    pub fn predecessors(&self, id: ChangeId) -> Result<&Predecessors> {
        self.preds.get(&id).ok_or(Error::UnknownChange(id))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.values().map(BTreeMap::len).sum()
    }

    /// Recomputes the forest structure for `queue`, carrying the state and
    /// estimate of every node whose `(change, base)` identity survives.
    pub fn refresh(mut self, queue: &[ChangeId], graph: &ConflictGraph, cfg: &EngineConfig) -> SpeculationForest {
        let preds = predecessor_lists(queue, graph, cfg);
        let mut nodes = BTreeMap::new();
        for (&c, p) in &preds {
            let old = self.nodes.remove(&c).unwrap_or_default();
            let complete = self.preds.get(&c) == Some(p) && old.len() == 1 << p.near.len();
            let per_change = if complete {
                old
            } else {
                let mut fresh = speculate(c, p);
                for (base, node) in fresh.iter_mut() {
                    if let Some(prev) = old.get(base) {
                        node.state = prev.state;
                        node.estimate = prev.estimate;
                    }
                }
                fresh
            };
            nodes.insert(c, per_change);
        }
        SpeculationForest {
            queue: queue.to_vec(),
            graph: graph.clone(),
            components: connected_components(graph, queue),
            preds,
            nodes,
            resolved: self.resolved,
        }
    }

    /// All nodes of `c`, deepest base first, then lexicographic by base.
    pub fn nodes_for_change(&self, c: ChangeId) -> Result<Vec<&BuildNode>> {
        let per_change = self.nodes.get(&c).ok_or(Error::UnknownChange(c))?;
        // Map order is lexicographic by base; a stable sort keeps it within each depth.
        let mut out: Vec<&BuildNode> = per_change.values().collect();
        out.sort_by_key(|n| std::cmp::Reverse(n.base.len()));
        Ok(out)
    }

    pub fn node(&self, key: &NodeKey) -> Option<&BuildNode> {
        self.nodes.get(&key.change)?.get(&key.base)
    }

    pub fn node_mut(&mut self, key: &NodeKey) -> Option<&mut BuildNode> {
        self.nodes.get_mut(&key.change)?.get_mut(&key.base)
    }

    /// Every node in queue order of its change, then by base.
    pub fn nodes(&self) -> impl Iterator<Item = &BuildNode> {
        self.queue.iter().filter_map(|c| self.nodes.get(c)).flat_map(|m| m.values())
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = &mut BuildNode> {
        self.nodes.values_mut().flat_map(|m| m.values_mut())
    }

    /// Nodes grouped per conflict component, in component order.
    pub fn trees(&self) -> Vec<Vec<&BuildNode>> {
        self.components
            .iter()
            .map(|comp| comp.iter().filter_map(|c| self.nodes.get(c)).flat_map(|m| m.values()).collect())
            .collect()
    }

    /// The running node of `change` carrying run id `run`, if it still exists.
    pub fn find_run(&self, change: ChangeId, run: u64) -> Option<NodeKey> {
        self.nodes.get(&change)?.values().find_map(|n| match n.state {
            NodeState::Running { run: r, .. } if r == run => Some(n.key()),
            _ => None,
        })
    }

    /// Removes `resolved` from the queue and drops every node whose base
    /// contradicts the decision: when it landed, nodes of conflicting
    /// successors that did not include it; when it was rejected, nodes that
    /// did. Surviving bases forget the resolved change (a landed change is now
    /// part of the head). Returns the removed nodes, including the resolved
    /// change's own.
    pub fn resolve_change(&mut self, resolved: ChangeId, landed: bool) -> Result<Vec<BuildNode>> {
        if self.resolved.contains(&resolved) {
            return Err(Error::AlreadyResolved(resolved));
        }
        let own = self.nodes.remove(&resolved).ok_or(Error::UnknownChange(resolved))?;
        let mut dropped: Vec<BuildNode> = own.into_values().collect();

        self.queue.retain(|&c| c != resolved);
        self.preds.remove(&resolved);
        self.resolved.insert(resolved);

        for (c, p) in self.preds.iter_mut() {
            if !p.contains(resolved) {
                continue;
            }
            p.near.retain(|&x| x != resolved);
            p.far.retain(|&x| x != resolved);

            let per_change = self.nodes.get_mut(c).expect("every pending change has nodes");
            let old = std::mem::take(per_change);
            for (mut base, mut node) in old {
                let included = base.remove(&resolved);
                if included == landed {
                    node.base = base.clone();
                    per_change.insert(base, node);
                } else {
                    dropped.push(node);
                }
            }
        }

        self.graph.remove(resolved);
        self.components = connected_components(&self.graph, &self.queue);
        Ok(dropped)
    }
}
