use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LineageTable, LockStatus};
use crate::model::{DeviceId, RoutineId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Planned intervals on one lineage overlap or are out of order.
    Overlap,
    /// More than one entry holds the lock.
    MultipleHolders,
    /// Statuses are not ordered Released, Acquired, then Scheduled/Leased.
    StatusOrder,
    /// Two routines appear in opposite orders on different lineages.
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub device: Option<DeviceId>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Before,
    After,
    Unordered,
}

impl LineageTable {
    pub fn check_invariants(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut pairs: BTreeMap<(RoutineId, RoutineId), DeviceId> = BTreeMap::new();
        for lin in self.lineages() {
            let d = lin.device;
            for w in lin.entries.windows(2) {
                if w[0].end() > w[1].start {
                    out.push(Violation {
                        kind: ViolationKind::Overlap,
                        device: Some(d),
                        detail: format!(
                            "{} [{}, {}) overlaps {} [{}, {})",
                            w[0].routine,
                            w[0].start,
                            w[0].end(),
                            w[1].routine,
                            w[1].start,
                            w[1].end()
                        ),
                    });
                }
                if w[0].status.rank() > w[1].status.rank() {
                    out.push(Violation {
                        kind: ViolationKind::StatusOrder,
                        device: Some(d),
                        detail: format!(
                            "{}:{} before {}:{}",
                            w[0].routine,
                            w[0].status.letter(),
                            w[1].routine,
                            w[1].status.letter()
                        ),
                    });
                }
            }
            let holders = lin.entries.iter().filter(|e| e.status == LockStatus::Acquired).count();
            if holders > 1 {
                out.push(Violation {
                    kind: ViolationKind::MultipleHolders,
                    device: Some(d),
                    detail: format!("{holders} entries hold the lock"),
                });
            }
            for (i, a) in lin.entries.iter().enumerate() {
                for b in &lin.entries[i + 1..] {
                    if let Some(other) = pairs.get(&(b.routine, a.routine)) {
                        out.push(Violation {
                            kind: ViolationKind::Inconsistent,
                            device: Some(d),
                            detail: format!(
                                "{} before {} here but after it on {}",
                                a.routine, b.routine, other
                            ),
                        });
                    }
                    pairs.entry((a.routine, b.routine)).or_insert(d);
                }
            }
        }
        if !self.order().is_acyclic() {
            out.push(Violation {
                kind: ViolationKind::Inconsistent,
                device: None,
                detail: "serialization order has a cycle".into(),
            });
        }
        out
    }

    /// Order of two routines as recorded by the lineages they share, falling
    /// back to the serialization graph for compacted routines.
    pub fn serialize_before(&self, a: RoutineId, b: RoutineId) -> Result<Relation, Violation> {
        let mut seen = BTreeSet::new();
        for lin in self.lineages() {
            if let (Some(i), Some(j)) = (lin.position(a), lin.position(b)) {
                seen.insert(if i < j { Relation::Before } else { Relation::After });
            }
        }
        match seen.len() {
            0 if self.order().precedes(a, b) => Ok(Relation::Before),
            0 if self.order().precedes(b, a) => Ok(Relation::After),
            0 => Ok(Relation::Unordered),
            1 => Ok(*seen.iter().next().expect("one relation")),
            _ => Err(Violation {
                kind: ViolationKind::Inconsistent,
                device: None,
                detail: format!("{a} and {b} are ordered both ways"),
            }),
        }
    }
}
