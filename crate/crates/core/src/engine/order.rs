//! The serialization order a run commits to: committed routines and
//! detected device events, as one sequence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::error::{Error, Result};
use crate::lineage::SerialGraph;
use crate::model::{DeviceEvent, DeviceId, HealthEvent, RoutineId};
use crate::trace::{Trace, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum OrderItem {
    Routine { routine: RoutineId },
    Event { event: DeviceEvent },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Routine(RoutineId),
    Event(usize),
}

#[derive(Default)]
struct Touches {
    /// Trace positions of successful writes, first and last.
    writes: Option<(usize, usize)>,
    failed: Vec<usize>,
}

/// Topologically sorts committed routines and device events.
///
/// Routine pairs keep the order recorded in `graph`. A routine goes before an
/// event on a device it wrote if all its writes precede the event, and after
/// it if they all follow; a command that failed places the routine inside the
/// outage it hit. Ties are broken by time, then id.
pub fn emit_serialization_order(trace: &Trace, graph: &SerialGraph) -> Result<Vec<OrderItem>> {
    let mut submit: BTreeMap<RoutineId, SimTime> = BTreeMap::new();
    let mut committed = BTreeSet::new();
    let mut events: Vec<(usize, DeviceEvent)> = Vec::new();
    let mut touches: BTreeMap<(RoutineId, DeviceId), Touches> = BTreeMap::new();
    for (seq, ev) in trace.iter().enumerate() {
        match &ev.kind {
            TraceKind::RoutineSubmit { routine } => {
                submit.insert(*routine, ev.time);
            }
            TraceKind::Commit { routine } => {
                committed.insert(*routine);
            }
            TraceKind::DeviceFail { device } | TraceKind::DeviceRestart { device } => {
                let kind =
                    if matches!(ev.kind, TraceKind::DeviceFail { .. }) { HealthEvent::Failure } else { HealthEvent::Restart };
                events.push((seq, DeviceEvent { device: *device, kind, detect_time: ev.time }));
            }
            TraceKind::CmdEnd { routine, device, ok, .. } => {
                let t = touches.entry((*routine, *device)).or_default();
                if *ok {
                    t.writes = Some(t.writes.map_or((seq, seq), |(a, _)| (a, seq)));
                } else {
                    t.failed.push(seq);
                }
            }
            _ => {}
        }
    }

    let mut edges: BTreeMap<Node, BTreeSet<Node>> = BTreeMap::new();
    let mut nodes: BTreeSet<Node> = committed.iter().map(|r| Node::Routine(*r)).collect();
    nodes.extend((0..events.len()).map(Node::Event));
    let mut edge = |a: Node, b: Node| {
        edges.entry(a).or_default().insert(b);
    };
    for r in &committed {
        for s in graph.successors(*r).filter(|s| committed.contains(s)) {
            edge(Node::Routine(*r), Node::Routine(s));
        }
    }
    let mut by_device: BTreeMap<DeviceId, Vec<usize>> = BTreeMap::new();
    for (i, (_, e)) in events.iter().enumerate() {
        by_device.entry(e.device).or_default().push(i);
    }
    for chain in by_device.values() {
        for w in chain.windows(2) {
            edge(Node::Event(w[0]), Node::Event(w[1]));
        }
    }
    for ((r, d), t) in &touches {
        if !committed.contains(r) {
            continue;
        }
        let chain = by_device.get(d).map(Vec::as_slice).unwrap_or(&[]);
        if let Some((first, last)) = t.writes {
            for &i in chain {
                let seq = events[i].0;
                if last < seq {
                    edge(Node::Routine(*r), Node::Event(i));
                } else if first > seq {
                    edge(Node::Event(i), Node::Routine(*r));
                } else {
                    return Err(Error::CyclicOrder);
                }
            }
        }
        for &f in &t.failed {
            let failure = chain.iter().rev().find(|&&i| events[i].0 < f && events[i].1.kind == HealthEvent::Failure);
            let restart = chain.iter().find(|&&i| events[i].0 > f && events[i].1.kind == HealthEvent::Restart);
            if let Some(&i) = failure {
                edge(Node::Event(i), Node::Routine(*r));
            }
            if let Some(&i) = restart {
                edge(Node::Routine(*r), Node::Event(i));
            }
        }
    }

    let key = |n: &Node| match n {
        Node::Routine(r) => (submit.get(r).copied().unwrap_or(0), 0, r.0 as usize),
        Node::Event(i) => (events[*i].1.detect_time, 1, *i),
    };
    let mut indeg: BTreeMap<Node, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    for succ in edges.values() {
        for s in succ {
            *indeg.get_mut(s).expect("known node") += 1;
        }
    }
    let mut ready: BTreeSet<((SimTime, u8, usize), Node)> =
        indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| (key(n), *n)).collect();
    let mut out = Vec::with_capacity(nodes.len());
    while let Some((_, n)) = ready.pop_first() {
        out.push(match n {
            Node::Routine(routine) => OrderItem::Routine { routine },
            Node::Event(i) => OrderItem::Event { event: events[i].1 },
        });
        for s in edges.get(&n).into_iter().flatten() {
            let d = indeg.get_mut(s).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert((key(s), *s));
            }
        }
    }
    if out.len() != nodes.len() {
        return Err(Error::CyclicOrder);
    }
    Ok(out)
}
