//! Profiler and prioritizer.
//!
//! For every pending change the profiler splits its conflicting predecessors
//! into those it is likely to finish before (bypassable) and the rest. The
//! prioritizer then scores each build node with the probability its result
//! will be used:
//!
//! ```text
//! needed(n) = prod_{i in F} outcome_i(n) * prod_{j in B} P(FT_c < FT_j)
//! ```
//!
//! where `outcome_i(n)` is `P(i lands)` when `i` is in the node's base and
//! `1 - P(i lands)` otherwise. When the bypass product collapses below the
//! floor, every predecessor is scored as non-bypassed (the single most likely
//! path model).

use crate::completion::{p_finishes_before, FinishTimeModel};
use crate::error::{Error, Result};
use crate::prediction::{DurationEstimate, SuccessPredictor, MIN_MINUTES};
use crate::speculation::{BaseSet, BuildNode, NodeKey, NodeState, SpeculationForest};
use crate::types::{BuildOutcome, Change, ChangeId, EngineConfig};
use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq)]
pub struct BypassPartition {
    pub change: ChangeId,
    /// Conflicting predecessors the change is not expected to bypass (F).
    pub blocking: Vec<ChangeId>,
    /// Conflicting predecessors the change may bypass (B).
    pub bypassable: Vec<ChangeId>,
    /// `P(FT_change < FT_j)` for every speculated predecessor.
    pub finish_first: BTreeMap<ChangeId, f64>,
    /// Product of `finish_first` over `bypassable`.
    pub bypass_product: f64,
    pub fallback_active: bool,
}

impl BypassPartition {
    /// Classifies speculated predecessors by `p >= tau`. Predecessors beyond
    /// the depth cap are never bypassable.
    pub fn from_probabilities(
        change: ChangeId,
        near: &[(ChangeId, f64)],
        far: &[ChangeId],
        cfg: &EngineConfig,
    ) -> Self {
        let mut blocking: Vec<ChangeId> = far.to_vec();
        let mut bypassable = Vec::new();
        let mut product = 1.0;
        for &(id, p) in near {
            if p >= cfg.blrd_eligibility_threshold {
                bypassable.push(id);
                product *= p;
            } else {
                blocking.push(id);
            }
        }
        blocking.sort();
        BypassPartition {
            change,
            blocking,
            bypassable,
            finish_first: near.iter().copied().collect(),
            bypass_product: product,
            fallback_active: product < cfg.bypass_product_floor,
        }
    }

    /// Every predecessor treated as non-bypassed.
    pub fn without_bypass(change: ChangeId, predecessors: impl IntoIterator<Item = ChangeId>) -> Self {
        let mut blocking: Vec<ChangeId> = predecessors.into_iter().collect();
        blocking.sort();
        BypassPartition {
            change,
            blocking,
            bypassable: Vec::new(),
            finish_first: BTreeMap::new(),
            bypass_product: 1.0,
            fallback_active: false,
        }
    }

    pub fn predecessors(&self) -> impl Iterator<Item = ChangeId> + '_ {
        self.blocking.iter().chain(&self.bypassable).copied()
    }

    /// The blocking set and bypass product used for scoring, after the fallback.
    fn scoring_terms(&self) -> (Cow<'_, [ChangeId]>, f64) {
        if self.fallback_active {
            let mut all: Vec<ChangeId> = self.predecessors().collect();
            all.sort();
            (Cow::Owned(all), 1.0)
        } else {
            (Cow::Borrowed(&self.blocking), self.bypass_product)
        }
    }
}

/// Finish-time model of `c` at time `now` over all of its nodes.
///
/// Each node contributes its elapsed time since the change arrived plus its
/// expected remaining duration: the full estimate when not started, the
/// estimate minus elapsed running time (floored at zero) when running, and
/// zero once completed.
pub fn finish_time_model(forest: &SpeculationForest, change: &Change, now: f64) -> Result<FinishTimeModel> {
    let nodes = forest.nodes_for_change(change.id)?;
    let elapsed = (now - change.arrival_time).max(0.0);
    let mut mean = 0.0;
    let mut variance = 0.0;
    for node in &nodes {
        let (remaining, var) = match node.state {
            NodeState::Completed { .. } => (0.0, 0.0),
            state => {
                let est = node.estimate.ok_or(Error::MissingEstimate(node.change))?;
                match state {
                    NodeState::Running { started_at, .. } => {
                        ((est.mean() - (now - started_at)).max(0.0), est.variance())
                    }
                    _ => (est.mean(), est.variance()),
                }
            }
        };
        mean += elapsed + remaining;
        variance += var;
    }
    let n = nodes.len().max(1) as f64;
    let combined = DurationEstimate::new((mean / n).max(MIN_MINUTES), variance / n)?;
    Ok(FinishTimeModel::new(change.arrival_time, combined))
}

/// Builds the bypass partition of pending change `c` at time `now`.
pub fn profile_change(
    c: ChangeId,
    forest: &SpeculationForest,
    changes: &BTreeMap<ChangeId, Change>,
    cfg: &EngineConfig,
    now: f64,
) -> Result<BypassPartition> {
    let mut models = BTreeMap::new();
    profile_with_cache(c, forest, changes, cfg, now, &mut models)
}

fn profile_with_cache(
    c: ChangeId,
    forest: &SpeculationForest,
    changes: &BTreeMap<ChangeId, Change>,
    cfg: &EngineConfig,
    now: f64,
    models: &mut BTreeMap<ChangeId, FinishTimeModel>,
) -> Result<BypassPartition> {
    let preds = forest.predecessors(c)?;
    let mut model_of = |id: ChangeId| -> Result<FinishTimeModel> {
        if let Some(m) = models.get(&id) {
            return Ok(*m);
        }
        let change = changes.get(&id).ok_or(Error::UnknownChange(id))?;
        let m = finish_time_model(forest, change, now)?;
        models.insert(id, m);
        Ok(m)
    };
    let own = model_of(c)?;
    let mut near = Vec::with_capacity(preds.near.len());
    for &j in &preds.near {
        near.push((j, p_finishes_before(&own, &model_of(j)?)));
    }
    Ok(BypassPartition::from_probabilities(c, &near, &preds.far, cfg))
}

/// Profiles every pending change in queue order.
pub fn profile_all(
    forest: &SpeculationForest,
    changes: &BTreeMap<ChangeId, Change>,
    cfg: &EngineConfig,
    now: f64,
) -> Result<BTreeMap<ChangeId, BypassPartition>> {
    let mut models = BTreeMap::new();
    forest
        .queue()
        .iter()
        .map(|&c| Ok((c, profile_with_cache(c, forest, changes, cfg, now, &mut models)?)))
        .collect()
}

/// Probability that `node`'s result decides its change.
///
/// `lands(i, base)` gives the probability that predecessor `i` lands on the
/// speculation path described by `base`.
pub fn needed_probability(
    node: &BuildNode,
    part: &BypassPartition,
    lands: &dyn Fn(ChangeId, &BaseSet) -> f64,
) -> Result<f64> {
    if node.change != part.change {
        return Err(Error::InconsistentBase(node.change));
    }
    if !node.base.iter().all(|b| part.blocking.contains(b) || part.bypassable.contains(b)) {
        return Err(Error::InconsistentBase(node.change));
    }
    let (blocking, bypass) = part.scoring_terms();
    Ok(score(bypass, blocking.iter().map(|&i| (node.base.contains(&i), lands(i, &node.base)))))
}

/// `bypass * prod outcome_i` over the blocking set, given for each member
/// whether it is in the node's base and its landing probability.
fn score(bypass: f64, blocking: impl IntoIterator<Item = (bool, f64)>) -> f64 {
    let mut p = bypass;
    for (in_base, q) in blocking {
        let q = q.clamp(0.0, 1.0);
        p *= if in_base { q } else { 1.0 - q };
    }
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedBuild {
    pub key: NodeKey,
    pub p_needed: f64,
    /// The node of a change with no unresolved conflicting predecessors.
    pub mandatory: bool,
    pub running: bool,
}

/// Descending priority: higher `p_needed`, then earlier change, then deeper
/// base, then lexicographically smaller base.
pub fn rank_order(a: &RankedBuild, b: &RankedBuild) -> Ordering {
    b.p_needed
        .total_cmp(&a.p_needed)
        .then_with(|| a.key.change.cmp(&b.key.change))
        .then_with(|| b.key.base.len().cmp(&a.key.base.len()))
        .then_with(|| a.key.base.cmp(&b.key.base))
}

/// Scores and orders every outstanding node of the forest.
pub fn rank_builds(
    forest: &SpeculationForest,
    partitions: &BTreeMap<ChangeId, BypassPartition>,
    changes: &BTreeMap<ChangeId, Change>,
    success: &dyn SuccessPredictor,
) -> Result<Vec<RankedBuild>> {
    // Prior probability that each pending change lands.
    let mut priors: BTreeMap<ChangeId, f64> = BTreeMap::new();
    for &c in forest.queue() {
        let change = changes.get(&c).ok_or(Error::UnknownChange(c))?;
        let nodes = forest.nodes_for_change(c)?;
        let fallback;
        let rep = match nodes.iter().find(|n| n.base.is_empty()).or_else(|| nodes.first()) {
            Some(n) => *n,
            None => {
                fallback = BuildNode::new(c, BaseSet::new());
                &fallback
            }
        };
        priors.insert(c, success.predict_success(change, rep));
    }
    let has_completed: BTreeSet<ChangeId> = forest
        .nodes()
        .filter(|n| matches!(n.state, NodeState::Completed { .. }))
        .map(|n| n.change)
        .collect();

    let mut ranked = Vec::new();
    for &c in forest.queue() {
        let part = partitions.get(&c).ok_or(Error::MissingPartition(c))?;
        let preds = forest.predecessors(c)?;
        let mandatory = preds.is_empty();
        // Bases are subsets of the near predecessors, handled as bitmasks.
        let near = &preds.near;
        let bit = |id: ChangeId| near.iter().position(|&x| x == id).map(|k| 1usize << k);
        let mask_of = |base: &BaseSet| base.iter().filter_map(|&b| bit(b)).fold(0, |m, b| m | b);

        let (blocking, bypass) = part.scoring_terms();
        let terms: Vec<Term> = blocking
            .iter()
            .map(|&i| {
                let prior = priors.get(&i).copied().unwrap_or(1.0);
                let observed = match forest.predecessors(i) {
                    Ok(i_preds) if has_completed.contains(&i) => {
                        let relevant = near.iter().copied().filter(|&b| i_preds.contains(b)).fold(0, |m, b| m | bit(b).unwrap_or(0));
                        Some((relevant, observed_outcomes(forest, i, near, preds)))
                    }
                    _ => None,
                };
                Term { bit: bit(i).unwrap_or(0), prior, observed }
            })
            .collect();

        for node in forest.nodes_for_change(c)? {
            if !node.is_outstanding() {
                continue;
            }
            let mask = mask_of(&node.base);
            let p = score(bypass, terms.iter().map(|t| (mask & t.bit != 0, t.lands(mask))));
            ranked.push(RankedBuild { key: node.key(), p_needed: p, mandatory, running: node.is_running() });
        }
    }
    // Nodes of each change were pushed in (depth, base) order, so a stable
    // sort on the leading keys yields `rank_order`.
    ranked.sort_by(|a, b| b.p_needed.total_cmp(&a.p_needed).then_with(|| a.key.change.cmp(&b.key.change)));
    debug_assert!(ranked.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
    Ok(ranked)
}

/// A blocking predecessor of the change being ranked.
struct Term {
    /// Its bit among the change's near predecessors; 0 when it is far.
    bit: usize,
    prior: f64,
    /// Bits of the near predecessors it also depends on, and its observed
    /// outcome per projection of a base onto them.
    observed: Option<(usize, Vec<Group>)>,
}

impl Term {
    /// Probability the predecessor lands on the path of the node with
    /// `mask`: the observed outcome of its build on the matching base when
    /// there is one, otherwise its prior.
    fn lands(&self, mask: usize) -> f64 {
        let Some((relevant, groups)) = &self.observed else { return self.prior };
        match groups[mask & relevant] {
            Group::Same(Some(BuildOutcome::Pass)) => 1.0,
            Group::Same(Some(BuildOutcome::Fail)) => 0.0,
            _ => self.prior,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Group {
    Empty,
    Same(Option<BuildOutcome>),
    Mixed,
}

/// Groups the nodes of predecessor `i` by the part of their base shared with
/// the ranked change's predecessors, indexed by bitmask over `near`. A group
/// yields an outcome only when all of its nodes completed with that same
/// outcome. Groups sharing a far predecessor can never match a base and are
/// skipped.
fn observed_outcomes(
    forest: &SpeculationForest,
    i: ChangeId,
    near: &[ChangeId],
    scored: &crate::speculation::Predecessors,
) -> Vec<Group> {
    let mut groups = vec![Group::Empty; 1 << near.len()];
    let Ok(nodes) = forest.nodes_for_change(i) else { return groups };
    'nodes: for n in nodes {
        let mut mask = 0;
        for b in &n.base {
            match near.iter().position(|x| x == b) {
                Some(k) => mask |= 1 << k,
                None if scored.contains(*b) => continue 'nodes,
                None => {}
            }
        }
        let o = n.outcome();
        groups[mask] = match groups[mask] {
            Group::Empty => Group::Same(o),
            Group::Same(g) if g == o => Group::Same(o),
            _ => Group::Mixed,
        };
    }
    groups
}
