//! Serialize-before relation over routines, including committed ones whose
//! lineage entries have already been compacted away.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::model::RoutineId;

#[derive(Debug, Clone, Default)]
struct Node {
    succ: BTreeSet<RoutineId>,
    pred: BTreeSet<RoutineId>,
    finalized: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SerialGraph {
    nodes: BTreeMap<RoutineId, Node>,
}

impl SerialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, r: RoutineId) {
        self.nodes.entry(r).or_default();
    }

    pub fn contains(&self, r: RoutineId) -> bool {
        self.nodes.contains_key(&r)
    }

    pub fn add_edge(&mut self, before: RoutineId, after: RoutineId) {
        if before == after {
            return;
        }
        self.nodes.entry(before).or_default().succ.insert(after);
        self.nodes.entry(after).or_default().pred.insert(before);
    }

    pub fn successors(&self, r: RoutineId) -> impl Iterator<Item = RoutineId> + '_ {
        self.nodes.get(&r).into_iter().flat_map(|n| n.succ.iter().copied())
    }

    pub fn has_edge(&self, before: RoutineId, after: RoutineId) -> bool {
        self.nodes.get(&before).is_some_and(|n| n.succ.contains(&after))
    }

    /// Drops an aborted routine. Its ordering constraints vanish with it.
    pub fn remove(&mut self, r: RoutineId) {
        if let Some(node) = self.nodes.remove(&r) {
            for s in node.succ {
                if let Some(n) = self.nodes.get_mut(&s) {
                    n.pred.remove(&r);
                }
            }
            for p in node.pred {
                if let Some(n) = self.nodes.get_mut(&p) {
                    n.succ.remove(&r);
                }
            }
        }
    }

    pub fn finalize(&mut self, r: RoutineId) {
        if let Some(n) = self.nodes.get_mut(&r) {
            n.finalized = true;
        }
    }

    pub fn is_finalized(&self, r: RoutineId) -> bool {
        self.nodes.get(&r).is_some_and(|n| n.finalized)
    }

    fn closure(&self, seeds: impl IntoIterator<Item = RoutineId>, forward: bool) -> BTreeSet<RoutineId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<RoutineId> = seeds.into_iter().collect();
        while let Some(r) = queue.pop_front() {
            if !seen.insert(r) {
                continue;
            }
            if let Some(n) = self.nodes.get(&r) {
                let next = if forward { &n.succ } else { &n.pred };
                queue.extend(next.iter().copied());
            }
        }
        seen
    }

    /// The seeds plus everything serialized before them.
    pub fn ancestors(&self, seeds: impl IntoIterator<Item = RoutineId>) -> BTreeSet<RoutineId> {
        self.closure(seeds, false)
    }

    /// The seeds plus everything serialized after them.
    pub fn descendants(&self, seeds: impl IntoIterator<Item = RoutineId>) -> BTreeSet<RoutineId> {
        self.closure(seeds, true)
    }

    /// Transitive serialize-before query.
    pub fn precedes(&self, a: RoutineId, b: RoutineId) -> bool {
        a != b && self.descendants([a]).contains(&b)
    }

    /// Kahn's algorithm with smallest-id tie break; `None` on a cycle.
    pub fn topo_order(&self) -> Option<Vec<RoutineId>> {
        let mut indeg: BTreeMap<RoutineId, usize> =
            self.nodes.iter().map(|(r, n)| (*r, n.pred.len())).collect();
        let mut ready: BTreeSet<RoutineId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(r, _)| *r).collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(r) = ready.pop_first() {
            out.push(r);
            for s in &self.nodes[&r].succ {
                let d = indeg.get_mut(s).expect("edge to known node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(*s);
                }
            }
        }
        (out.len() == self.nodes.len()).then_some(out)
    }

    /// Topological order of a subset, using only edges inside it.
    pub fn topo_order_of(&self, subset: &BTreeSet<RoutineId>) -> Option<Vec<RoutineId>> {
        let inside = |r: &RoutineId| subset.contains(r);
        let mut indeg: BTreeMap<RoutineId, usize> = subset
            .iter()
            .map(|r| (*r, self.nodes.get(r).map_or(0, |n| n.pred.iter().filter(|p| inside(p)).count())))
            .collect();
        let mut ready: BTreeSet<RoutineId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(r, _)| *r).collect();
        let mut out = Vec::with_capacity(subset.len());
        while let Some(r) = ready.pop_first() {
            out.push(r);
            if let Some(n) = self.nodes.get(&r) {
                for s in n.succ.iter().filter(|s| inside(s)) {
                    let d = indeg.get_mut(s).expect("subset member");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(*s);
                    }
                }
            }
        }
        (out.len() == subset.len()).then_some(out)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo_order().is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(i: u32) -> RoutineId {
        RoutineId(i)
    }

    #[test]
    fn closure_and_topo() {
        let mut g = SerialGraph::new();
        g.add_edge(r(1), r(2));
        g.add_edge(r(2), r(3));
        g.add_node(r(0));
        assert!(g.precedes(r(1), r(3)));
        assert!(!g.precedes(r(3), r(1)));
        assert_eq!(g.topo_order().unwrap(), vec![r(0), r(1), r(2), r(3)]);
        g.add_edge(r(3), r(1));
        assert!(g.topo_order().is_none());
    }

    #[test]
    fn removal_drops_edges() {
        let mut g = SerialGraph::new();
        g.add_edge(r(1), r(2));
        g.add_edge(r(2), r(3));
        g.remove(r(2));
        assert!(!g.precedes(r(1), r(3)));
        assert_eq!(g.len(), 2);
    }
}
