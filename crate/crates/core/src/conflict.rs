//! Target-level conflict analysis.
//!
//! Two changes conflict when they touch at least one common build target.
//! Changes that do not conflict can be built and landed independently, which
//! is what lets the speculation forest split into per-component trees.

use crate::error::{Error, Result};
use crate::types::{Change, ChangeId};
use std::collections::{BTreeMap, BTreeSet};

/// True iff the two changes touch a common target.
pub fn conflicts(a: &Change, b: &Change) -> bool {
    let b_targets: BTreeSet<&String> = b.all_targets().collect();
    a.all_targets().any(|t| b_targets.contains(t))
}

/// Undirected, irreflexive conflict relation over a set of changes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConflictGraph {
    adjacency: BTreeMap<ChangeId, BTreeSet<ChangeId>>,
}

impl ConflictGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: ChangeId) -> bool {
        self.adjacency.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn add_vertex(&mut self, id: ChangeId) {
        self.adjacency.entry(id).or_default();
    }

    /// Adds an undirected edge. Self-loops are ignored.
    pub fn add_edge(&mut self, a: ChangeId, b: ChangeId) {
        if a == b {
            return;
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    pub fn has_edge(&self, a: ChangeId, b: ChangeId) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn neighbors(&self, id: ChangeId) -> impl Iterator<Item = ChangeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: ChangeId) -> usize {
        self.adjacency.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Inserts `change` and connects it to every conflicting member of `others`.
    pub fn insert_change<'a>(&mut self, change: &Change, others: impl IntoIterator<Item = &'a Change>) {
        self.add_vertex(change.id);
        for other in others {
            if other.id != change.id && conflicts(change, other) {
                self.add_edge(change.id, other.id);
            }
        }
    }

    /// Removes a vertex and all of its edges.
    pub fn remove(&mut self, id: ChangeId) {
        if let Some(neighbors) = self.adjacency.remove(&id) {
            for n in neighbors {
                if let Some(set) = self.adjacency.get_mut(&n) {
                    set.remove(&id);
                }
            }
        }
    }
}

pub fn build_conflict_graph(changes: &[Change]) -> Result<ConflictGraph> {
    let mut seen = BTreeSet::new();
    for c in changes {
        if !seen.insert(c.id) {
            return Err(Error::DuplicateChange(c.id));
        }
    }

    // Index targets so the pairwise check only touches changes that share one.
    let mut by_target: BTreeMap<&str, Vec<ChangeId>> = BTreeMap::new();
    let mut graph = ConflictGraph::new();
    for c in changes {
        graph.add_vertex(c.id);
        let targets: BTreeSet<&String> = c.all_targets().collect();
        for t in targets {
            by_target.entry(t.as_str()).or_default().push(c.id);
        }
    }
    for ids in by_target.values() {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                graph.add_edge(a, b);
            }
        }
    }
    Ok(graph)
}

/// Partitions `changes` into connected components of `graph`, preserving the
/// input order inside each component. Components are ordered by their first
/// member. Edges to vertices outside `changes` are ignored.
pub fn connected_components(graph: &ConflictGraph, changes: &[ChangeId]) -> Vec<Vec<ChangeId>> {
    let index: BTreeMap<ChangeId, usize> = changes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut parent: Vec<usize> = (0..changes.len()).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for (i, &c) in changes.iter().enumerate() {
        for n in graph.neighbors(c) {
            if let Some(&j) = index.get(&n) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // Keep the earliest member as the root so component order is stable.
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi] = lo;
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<ChangeId>> = BTreeMap::new();
    for (i, &c) in changes.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(c);
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<ChangeId> {
        v.iter().map(|&i| ChangeId(i)).collect()
    }

    #[test]
    fn overlap_and_disjoint() {
        let a = Change::new(1, 0.0, ["svc/x"]);
        let b = Change::new(2, 0.0, ["svc/x", "svc/y"]);
        let c = Change::new(3, 0.0, ["svc/z"]);
        let empty = Change::new(4, 0.0, Vec::<String>::new());
        assert!(conflicts(&a, &b));
        assert!(!conflicts(&a, &c));
        assert!(!conflicts(&empty, &a));
    }

    #[test]
    fn added_and_removed_targets_count() {
        let mut a = Change::new(1, 0.0, ["svc/x"]);
        a.targets_removed.insert("svc/old".into());
        let mut b = Change::new(2, 0.0, ["svc/y"]);
        b.targets_added.insert("svc/old".into());
        assert!(conflicts(&a, &b));
    }

    #[test]
    fn complete_and_empty_graphs() {
        let all = [
            Change::new(1, 0.0, ["t"]),
            Change::new(2, 1.0, ["t", "u"]),
            Change::new(3, 2.0, ["t"]),
        ];
        let g = build_conflict_graph(&all).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert_eq!(connected_components(&g, &ids(&[1, 2, 3])), vec![ids(&[1, 2, 3])]);

        let disjoint = [Change::new(1, 0.0, ["a"]), Change::new(2, 0.0, ["b"])];
        let g = build_conflict_graph(&disjoint).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(connected_components(&g, &ids(&[1, 2])), vec![ids(&[1]), ids(&[2])]);
    }

    #[test]
    fn chain_is_a_path_and_one_component() {
        let x = Change::new(1, 0.0, ["a"]);
        let y = Change::new(2, 0.0, ["a", "b"]);
        let z = Change::new(3, 0.0, ["b"]);
        let g = build_conflict_graph(&[x, y, z]).unwrap();
        assert!(g.has_edge(ChangeId(1), ChangeId(2)));
        assert!(g.has_edge(ChangeId(2), ChangeId(3)));
        assert!(!g.has_edge(ChangeId(1), ChangeId(3)));
        assert_eq!(connected_components(&g, &ids(&[1, 2, 3])), vec![ids(&[1, 2, 3])]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = build_conflict_graph(&[Change::new(1, 0.0, ["a"]), Change::new(1, 1.0, ["b"])]);
        assert_eq!(err, Err(Error::DuplicateChange(ChangeId(1))));
    }

    #[test]
    fn incremental_insert_and_remove() {
        let a = Change::new(1, 0.0, ["t"]);
        let b = Change::new(2, 0.0, ["t"]);
        let mut g = ConflictGraph::new();
        g.insert_change(&a, []);
        g.insert_change(&b, [&a]);
        assert!(g.has_edge(a.id, b.id));
        g.remove(a.id);
        assert!(!g.contains(a.id));
        assert_eq!(g.degree(b.id), 0);
    }

    fn arb_changes() -> impl Strategy<Value = Vec<Change>> {
        prop::collection::vec(prop::collection::btree_set(0u8..12, 0..4), 1..14).prop_map(|sets| {
            sets.into_iter()
                .enumerate()
                .map(|(i, s)| Change::new(i as u32 + 1, i as f64, s.into_iter().map(|t| format!("t{t}"))))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn graph_matches_pairwise_rule(changes in arb_changes()) {
            let g = build_conflict_graph(&changes).unwrap();
            for a in &changes {
                prop_assert!(!g.has_edge(a.id, a.id));
                for b in &changes {
                    prop_assert_eq!(conflicts(a, b), conflicts(b, a));
                    if a.id != b.id {
                        prop_assert_eq!(g.has_edge(a.id, b.id), conflicts(a, b));
                    }
                }
            }
        }

        #[test]
        fn components_are_sound_and_stable(changes in arb_changes()) {
            let g = build_conflict_graph(&changes).unwrap();
            let order: Vec<ChangeId> = changes.iter().map(|c| c.id).collect();
            let comps = connected_components(&g, &order);
            let mut which = BTreeMap::new();
            for (k, comp) in comps.iter().enumerate() {
                prop_assert!(comp.windows(2).all(|w| w[0] < w[1]));
                for &c in comp {
                    which.insert(c, k);
                }
            }
            prop_assert_eq!(which.len(), order.len());
            for &a in &order {
                for b in g.neighbors(a) {
                    prop_assert_eq!(which[&a], which[&b]);
                }
            }
        }
    }
}
