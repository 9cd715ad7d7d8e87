//! Per-device lock lineages: the planned order in which routines hold each
//! device's virtual lock, plus the committed state the lineage starts from.
//!
//! A routine may only use a device once every entry to its left has been
//! released, so the position of an entry in a lineage is the position of its
//! routine in that device's serialization order. Leases are insertions
//! relative to a still-live routine: to its left before it has touched the
//! device (pre-lease), or behind it after its last access (post-lease).

mod dump;
mod graph;
mod invariants;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use self::dump::LineageRow;
pub use self::graph::SerialGraph;
pub use self::invariants::{Relation, Violation, ViolationKind};

use crate::clock::SimTime;
use crate::model::{Device, DeviceId, DeviceState, RoutineId};
use crate::trace::LeaseKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LockStatus {
    Scheduled,
    Acquired,
    Released,
    /// Held by this entry's routine but lent to `to`, which sits to its left.
    Leased(RoutineId),
}

impl LockStatus {
    pub fn letter(&self) -> &'static str {
        match self {
            LockStatus::Scheduled => "S",
            LockStatus::Acquired => "A",
            LockStatus::Released => "R",
            LockStatus::Leased(_) => "L",
        }
    }

    /// Released < Acquired < {Scheduled, Leased}.
    fn rank(&self) -> u8 {
        match self {
            LockStatus::Released => 0,
            LockStatus::Acquired => 1,
            LockStatus::Scheduled | LockStatus::Leased(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockAccess {
    pub routine: RoutineId,
    pub status: LockStatus,
    /// The routine's final target for this device.
    pub desired: DeviceState,
    /// Last value the routine actually got the device to apply.
    pub applied: Option<DeviceState>,
    pub start: SimTime,
    pub duration: u64,
    /// The routine has dispatched at least one command on the device.
    pub used: bool,
    /// The routine's last access of the device has finished.
    pub done: bool,
    /// The routine conditions on the device's current state.
    pub reads: bool,
}

impl LockAccess {
    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub device: DeviceId,
    pub committed: DeviceState,
    pub entries: Vec<LockAccess>,
}

impl Lineage {
    pub fn position(&self, r: RoutineId) -> Option<usize> {
        self.entries.iter().position(|e| e.routine == r)
    }

    pub fn entry(&self, r: RoutineId) -> Option<&LockAccess> {
        self.entries.iter().find(|e| e.routine == r)
    }

    fn entry_mut(&mut self, r: RoutineId) -> Option<&mut LockAccess> {
        self.entries.iter_mut().find(|e| e.routine == r)
    }

    /// First index a new entry may be inserted at: everything before it has
    /// already used the device.
    pub fn open_index(&self) -> usize {
        self.entries
            .iter()
            .position(|e| e.status != LockStatus::Released && !e.used)
            .unwrap_or(self.entries.len())
    }

    /// Index of the first entry that has not released the device.
    pub fn head_index(&self) -> Option<usize> {
        self.entries.iter().position(|e| e.status != LockStatus::Released)
    }

    /// Somebody is using the device right now or has used it and still holds it.
    pub fn busy(&self) -> bool {
        self.entries.iter().any(|e| e.status == LockStatus::Acquired && e.used)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRecord {
    pub device: DeviceId,
    pub src: RoutineId,
    pub dst: RoutineId,
    pub kind: LeaseKind,
    pub granted_at: SimTime,
    pub revoke_at: SimTime,
}

/// Revocation deadline: grant time plus the estimated hold scaled by the
/// leniency factor, rounded up to whole milliseconds.
pub fn revoke_deadline(granted_at: SimTime, hold_estimate_ms: u64, leniency: f64) -> SimTime {
    // Guard against 100 * 1.1 rounding up to 111.
    granted_at + (hold_estimate_ms as f64 * leniency - 1e-9).ceil().max(0.0) as u64
}

/// One lock-access to insert for a routine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPlan {
    pub device: DeviceId,
    pub index: usize,
    pub start: SimTime,
    pub duration: u64,
    pub desired: DeviceState,
    pub reads: bool,
    /// Estimated time from now until the routine's last access of the device
    /// ends; used for lease deadlines.
    pub hold_estimate_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Denial {
    /// An existing serialize-before decision would be contradicted.
    Contradiction,
    /// A live writer to the left would expose an uncommitted value.
    DirtyRead,
    /// The lock holder has already started using the device.
    HolderBusy,
    /// The position is not available (before an entry that has used the device).
    Occupied,
    LeasingDisabled,
    NotPresent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeaseOutcome {
    Granted(LeaseRecord),
    Denied(Denial),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AcquireOutcome {
    Acquired(Vec<LeaseRecord>),
    Retry,
}

/// What happened to the head of a lineage after a release.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Now(RoutineId),
    At(RoutineId, SimTime),
}

/// A rollback write for an aborted routine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correction {
    pub device: DeviceId,
    pub state: DeviceState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeasePolicy {
    pub pre_lease: bool,
    pub post_lease: bool,
    pub leniency: f64,
}

impl Default for LeasePolicy {
    fn default() -> Self {
        LeasePolicy { pre_lease: true, post_lease: true, leniency: 1.1 }
    }
}

#[derive(Debug, Clone)]
pub struct LineageTable {
    policy: LeasePolicy,
    lineages: BTreeMap<DeviceId, Lineage>,
    order: SerialGraph,
    /// Last committed routine whose write survives on each device.
    committed_tail: BTreeMap<DeviceId, RoutineId>,
    leases: Vec<LeaseRecord>,
    members: BTreeMap<RoutineId, BTreeSet<DeviceId>>,
}

impl LineageTable {
    pub fn new(devices: &[Device], policy: LeasePolicy) -> Self {
        let lineages = devices
            .iter()
            .map(|d| (d.id, Lineage { device: d.id, committed: d.initial.clone(), entries: Vec::new() }))
            .collect();
        LineageTable {
            policy,
            lineages,
            order: SerialGraph::new(),
            committed_tail: BTreeMap::new(),
            leases: Vec::new(),
            members: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> LeasePolicy {
        self.policy
    }

    pub fn lineage(&self, d: DeviceId) -> &Lineage {
        &self.lineages[&d]
    }

    pub fn lineages(&self) -> impl Iterator<Item = &Lineage> {
        self.lineages.values()
    }

    pub fn order(&self) -> &SerialGraph {
        &self.order
    }

    pub fn leases(&self) -> &[LeaseRecord] {
        &self.leases
    }

    /// Routines currently holding entries.
    pub fn members(&self) -> impl Iterator<Item = RoutineId> + '_ {
        self.members.keys().copied()
    }

    pub fn is_member(&self, r: RoutineId) -> bool {
        self.members.contains_key(&r)
    }

    pub fn devices_of(&self, r: RoutineId) -> impl Iterator<Item = DeviceId> + '_ {
        self.members.get(&r).into_iter().flatten().copied()
    }

    pub fn entry(&self, r: RoutineId, d: DeviceId) -> Option<&LockAccess> {
        self.lineages.get(&d)?.entry(r)
    }

    pub fn committed_state(&self, d: DeviceId) -> &DeviceState {
        &self.lineages[&d].committed
    }

    /// Routines serialized directly before/after a prospective entry at
    /// `index` of `d`'s lineage.
    pub fn pre_post_sets(&self, d: DeviceId, index: usize) -> (BTreeSet<RoutineId>, BTreeSet<RoutineId>) {
        let lin = &self.lineages[&d];
        let index = index.min(lin.entries.len());
        let mut pre: BTreeSet<RoutineId> = lin.entries[..index].iter().map(|e| e.routine).collect();
        if let Some(t) = self.committed_tail.get(&d) {
            pre.insert(*t);
        }
        let post = lin.entries[index..].iter().map(|e| e.routine).collect();
        (pre, post)
    }

    /// Checks that inserting `r` at the given lineage positions keeps the
    /// serialize-before relation acyclic.
    pub fn validate(&self, r: RoutineId, slots: &[(DeviceId, usize)]) -> Result<(), Denial> {
        let mut pre = BTreeSet::new();
        let mut post = BTreeSet::new();
        for &(d, index) in slots {
            let lin = self.lineages.get(&d).ok_or(Denial::NotPresent)?;
            if index < lin.open_index() || index > lin.entries.len() {
                return Err(Denial::Occupied);
            }
            let (p, q) = self.pre_post_sets(d, index);
            pre.extend(p);
            post.extend(q);
        }
        pre.remove(&r);
        post.remove(&r);
        // `r` may already be ordered through its other entries.
        pre.insert(r);
        post.insert(r);
        let before = self.order.ancestors(pre);
        let after = self.order.descendants(post);
        if before.iter().any(|x| *x != r && after.contains(x)) {
            return Err(Denial::Contradiction);
        }
        Ok(())
    }

    /// Inserts all entries of `r` and links it into the serialization order.
    /// Callers validate first.
    pub fn insert(&mut self, r: RoutineId, plans: Vec<EntryPlan>, now: SimTime) -> Vec<LeaseRecord> {
        let mut granted = Vec::new();
        self.order.add_node(r);
        let members = self.members.entry(r).or_default();
        for p in &plans {
            members.insert(p.device);
        }
        for p in plans {
            let (pre, post) = self.pre_post_sets(p.device, p.index);
            for x in pre {
                self.order.add_edge(x, r);
            }
            for x in post {
                self.order.add_edge(r, x);
            }
            let lin = self.lineages.get_mut(&p.device).expect("known device");
            let index = p.index.min(lin.entries.len());
            lin.entries.insert(
                index,
                LockAccess {
                    routine: r,
                    status: LockStatus::Scheduled,
                    desired: p.desired,
                    applied: None,
                    start: p.start,
                    duration: p.duration.max(1),
                    used: false,
                    done: false,
                    reads: p.reads,
                },
            );
            // Cutting in front of a live routine is a pre-lease from it.
            if let Some(src) = lin.entries.get(index + 1).map(|e| e.routine) {
                let rec = LeaseRecord {
                    device: p.device,
                    src,
                    dst: r,
                    kind: LeaseKind::Pre,
                    granted_at: now,
                    revoke_at: revoke_deadline(now, p.hold_estimate_ms, self.policy.leniency),
                };
                if let Some(e) = lin.entries.get_mut(index + 1) {
                    if e.status == LockStatus::Acquired {
                        e.status = LockStatus::Leased(r);
                    }
                }
                self.leases.push(rec.clone());
                granted.push(rec);
            }
            let (_, post_lease) = self.refresh_device(p.device, now);
            granted.extend(post_lease);
        }
        granted
    }

    /// Early lock acquisition: either every entry is placed so that it holds
    /// its lock immediately, or nothing changes.
    pub fn acquire_all_or_none(&mut self, r: RoutineId, plans: Vec<EntryPlan>, now: SimTime) -> AcquireOutcome {
        for p in &plans {
            let lin = &self.lineages[&p.device];
            if lin.busy() || Some(p.index) != Some(lin.head_index().unwrap_or(lin.entries.len())) {
                return AcquireOutcome::Retry;
            }
            if p.index < lin.entries.len() && !self.policy.pre_lease {
                return AcquireOutcome::Retry;
            }
            if p.reads && p.index > 0 {
                return AcquireOutcome::Retry;
            }
        }
        let slots: Vec<_> = plans.iter().map(|p| (p.device, p.index)).collect();
        if self.validate(r, &slots).is_err() {
            return AcquireOutcome::Retry;
        }
        let plans = plans.into_iter().map(|p| EntryPlan { start: now.min(p.start), ..p }).collect();
        AcquireOutcome::Acquired(self.insert(r, plans, now))
    }

    /// Lends `src`'s lock on `device` to `dst`, placing `dst` ahead of it.
    pub fn try_pre_lease(&mut self, src: RoutineId, dst: RoutineId, plan: EntryPlan, now: SimTime) -> LeaseOutcome {
        if !self.policy.pre_lease {
            return LeaseOutcome::Denied(Denial::LeasingDisabled);
        }
        let lin = &self.lineages[&plan.device];
        let Some(pos) = lin.position(src) else {
            return LeaseOutcome::Denied(Denial::NotPresent);
        };
        if lin.entries[pos].used {
            return LeaseOutcome::Denied(Denial::HolderBusy);
        }
        if let Err(d) = self.validate(dst, &[(plan.device, pos)]) {
            return LeaseOutcome::Denied(d);
        }
        let device = plan.device;
        let granted = self.insert(dst, vec![EntryPlan { index: pos, start: now, ..plan }], now);
        match granted.into_iter().find(|l| l.kind == LeaseKind::Pre && l.src == src && l.device == device) {
            Some(rec) => LeaseOutcome::Granted(rec),
            None => LeaseOutcome::Denied(Denial::NotPresent),
        }
    }

    /// Hands `src`'s lock on `device` to `dst` after `src`'s last access.
    pub fn try_post_lease(&mut self, src: RoutineId, dst: RoutineId, plan: EntryPlan, now: SimTime) -> LeaseOutcome {
        if !self.policy.post_lease {
            return LeaseOutcome::Denied(Denial::LeasingDisabled);
        }
        let lin = &self.lineages[&plan.device];
        let Some(pos) = lin.position(src) else {
            return LeaseOutcome::Denied(Denial::NotPresent);
        };
        if !lin.entries[pos].done {
            return LeaseOutcome::Denied(Denial::HolderBusy);
        }
        if lin.entries[pos + 1..].iter().any(|e| e.status != LockStatus::Released) {
            return LeaseOutcome::Denied(Denial::Occupied);
        }
        if plan.reads && lin.entries[pos].applied.is_some() {
            return LeaseOutcome::Denied(Denial::DirtyRead);
        }
        if let Err(d) = self.validate(dst, &[(plan.device, lin.entries.len())]) {
            return LeaseOutcome::Denied(d);
        }
        let device = plan.device;
        let index = self.lineages[&device].entries.len();
        let granted = self.insert(dst, vec![EntryPlan { index, start: now, ..plan }], now);
        match granted.into_iter().find(|l| l.kind == LeaseKind::Post && l.src == src && l.device == device) {
            Some(rec) => LeaseOutcome::Granted(rec),
            None => LeaseOutcome::Denied(Denial::NotPresent),
        }
    }

    /// Re-derives statuses at the head of a lineage. Returns the activation
    /// of the head entry, if it changed, and any post-leases that started.
    fn refresh_device(&mut self, d: DeviceId, now: SimTime) -> (Option<Activation>, Vec<LeaseRecord>) {
        let post_lease = self.policy.post_lease;
        let leniency = self.policy.leniency;
        let lin = self.lineages.get_mut(&d).expect("known device");
        let Some(head) = lin.head_index() else {
            return (None, Vec::new());
        };
        let mut activation = None;
        let mut leases = Vec::new();
        match lin.entries[head].status {
            LockStatus::Acquired => {}
            LockStatus::Scheduled | LockStatus::Leased(_) => {
                let e = &lin.entries[head];
                // A reader waits until every earlier writer has committed.
                let dirty = e.reads && lin.entries[..head].iter().any(|l| l.applied.is_some());
                if e.start <= now && !dirty {
                    lin.entries[head].status = LockStatus::Acquired;
                    activation = Some(Activation::Now(lin.entries[head].routine));
                    if head > 0 && post_lease {
                        let src = lin.entries[head - 1].routine;
                        let dst = lin.entries[head].routine;
                        let hold = lin.entries[head].duration;
                        let rec = LeaseRecord {
                            device: d,
                            src,
                            dst,
                            kind: LeaseKind::Post,
                            granted_at: now,
                            revoke_at: revoke_deadline(now, hold, leniency),
                        };
                        leases.push(rec);
                    }
                } else if !dirty {
                    activation = Some(Activation::At(e.routine, e.start));
                }
            }
            LockStatus::Released => unreachable!("head is not released"),
        }
        let head_routine = lin.entries[head].routine;
        for e in lin.entries[head + 1..].iter_mut() {
            if e.status == LockStatus::Acquired {
                e.status = LockStatus::Leased(head_routine);
            }
        }
        self.leases.extend(leases.iter().cloned());
        (activation, leases)
    }

    /// Refreshes every lineage; returns activations and newly started
    /// post-leases.
    pub fn refresh_all(&mut self, now: SimTime) -> (Vec<Activation>, Vec<LeaseRecord>) {
        let devices: Vec<DeviceId> = self.lineages.keys().copied().collect();
        let mut acts = Vec::new();
        let mut leases = Vec::new();
        for d in devices {
            let (a, l) = self.refresh_device(d, now);
            acts.extend(a);
            leases.extend(l);
        }
        (acts, leases)
    }

    /// The routine dispatched a command on `d`. Requires the lock.
    pub fn note_use(&mut self, r: RoutineId, d: DeviceId) {
        let e = self.lineages.get_mut(&d).and_then(|l| l.entry_mut(r)).expect("routine holds an entry");
        debug_assert_eq!(e.status, LockStatus::Acquired, "{r} used {d} without the lock");
        e.used = true;
    }

    pub fn can_use(&self, r: RoutineId, d: DeviceId) -> bool {
        self.entry(r, d).is_some_and(|e| e.status == LockStatus::Acquired)
    }

    pub fn record_write(&mut self, r: RoutineId, d: DeviceId, state: DeviceState) {
        if let Some(e) = self.lineages.get_mut(&d).and_then(|l| l.entry_mut(r)) {
            e.applied = Some(state);
        }
    }

    /// The routine's last access of `d` ended: the lock moves on if
    /// post-leasing is enabled, otherwise it is held until the routine ends.
    pub fn transition_on_release(&mut self, r: RoutineId, d: DeviceId, now: SimTime) -> (Option<Activation>, Vec<LeaseRecord>) {
        let post_lease = self.policy.post_lease;
        if let Some(e) = self.lineages.get_mut(&d).and_then(|l| l.entry_mut(r)) {
            e.done = true;
            if e.duration == 0 || e.end() > now {
                e.duration = now.saturating_sub(e.start).max(1);
            }
            if post_lease {
                e.status = LockStatus::Released;
            }
        }
        // A pre-lease is returned once its borrower is done with the device.
        self.leases.retain(|l| !(l.kind == LeaseKind::Pre && l.dst == r && l.device == d));
        self.refresh_device(d, now)
    }

    /// Commits `r`: its surviving writes become committed state, and on every
    /// device it wrote, its entry and all entries to its left are removed.
    pub fn commit_with_compaction(&mut self, r: RoutineId, now: SimTime) -> (Vec<Activation>, Vec<LeaseRecord>) {
        let devices: Vec<DeviceId> = self.members.remove(&r).into_iter().flatten().collect();
        let mut acts = Vec::new();
        let mut leases = Vec::new();
        for d in devices {
            let lin = self.lineages.get_mut(&d).expect("known device");
            let Some(pos) = lin.position(r) else { continue };
            match lin.entries[pos].applied.clone() {
                Some(state) => {
                    debug_assert!(
                        lin.entries[..pos].iter().all(|e| e.status == LockStatus::Released || e.done),
                        "compaction would drop an entry that has not released {d}"
                    );
                    lin.committed = state;
                    lin.entries.drain(..=pos);
                    self.committed_tail.insert(d, r);
                }
                None => {
                    lin.entries.remove(pos);
                }
            }
            let (a, l) = self.refresh_device(d, now);
            acts.extend(a);
            leases.extend(l);
        }
        self.leases.retain(|l| l.src != r && l.dst != r);
        self.order.finalize(r);
        self.prune_leases();
        (acts, leases)
    }

    /// Removes an aborted routine. On devices it was the last to write, a
    /// correction restores the previous writer's value (or the committed
    /// state) unless the device already shows it.
    pub fn abort_rollback(
        &mut self,
        r: RoutineId,
        now: SimTime,
        current: impl Fn(DeviceId) -> DeviceState,
    ) -> (Vec<Correction>, Vec<Activation>, Vec<LeaseRecord>) {
        let devices: Vec<DeviceId> = self.members.remove(&r).into_iter().flatten().collect();
        let mut corrections = Vec::new();
        let mut acts = Vec::new();
        let mut leases = Vec::new();
        for d in devices {
            let lin = self.lineages.get_mut(&d).expect("known device");
            let Some(pos) = lin.position(r) else { continue };
            let last_writer = lin.entries.iter().rposition(|e| e.applied.is_some());
            if last_writer == Some(pos) {
                let target = lin.entries[..pos]
                    .iter()
                    .rev()
                    .find_map(|e| e.applied.clone())
                    .unwrap_or_else(|| lin.committed.clone());
                if current(d) != target {
                    corrections.push(Correction { device: d, state: target });
                }
            }
            lin.entries.remove(pos);
            let (a, l) = self.refresh_device(d, now);
            acts.extend(a);
            leases.extend(l);
        }
        self.leases.retain(|l| l.src != r && l.dst != r);
        self.order.remove(r);
        (corrections, acts, leases)
    }

    fn prune_leases(&mut self) {
        let members = &self.members;
        self.leases.retain(|l| members.contains_key(&l.dst) && members.contains_key(&l.src));
    }

    /// Best estimate of a device's present state from the table alone.
    pub fn current_status(&self, d: DeviceId) -> DeviceState {
        let lin = &self.lineages[&d];
        if let Some(e) = lin.entries.iter().find(|e| e.status == LockStatus::Acquired) {
            return e.desired.clone();
        }
        if let Some(e) = lin.entries.iter().rev().find(|e| e.status == LockStatus::Released) {
            return e.desired.clone();
        }
        lin.committed.clone()
    }

    /// Revokes expired pre-leases for which `revoke` holds (typically: the
    /// lender is waiting and the borrower has not begun its last access).
    /// Expired leases whose borrower is done are dropped. Returns the revoked
    /// records; their borrowers must abort.
    pub fn revoke_expired_leases(&mut self, now: SimTime, revoke: impl Fn(&LeaseRecord) -> bool) -> Vec<LeaseRecord> {
        let mut revoked = Vec::new();
        let mut keep = Vec::with_capacity(self.leases.len());
        for l in self.leases.drain(..) {
            let expired = l.kind == LeaseKind::Pre && l.revoke_at <= now;
            let dst_done = self.lineages[&l.device].entry(l.dst).is_none_or(|e| e.done);
            if expired && dst_done {
                continue;
            }
            if expired && revoke(&l) {
                revoked.push(l);
            } else {
                keep.push(l);
            }
        }
        self.leases = keep;
        revoked
    }

    /// Earliest future lease deadline, for wake-up scheduling.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.leases.iter().filter(|l| l.kind == LeaseKind::Pre).map(|l| l.revoke_at).min()
    }

    /// Overwrites the planned interval of an entry.
    pub fn set_plan(&mut self, r: RoutineId, d: DeviceId, start: SimTime, duration: u64) {
        if let Some(e) = self.lineages.get_mut(&d).and_then(|l| l.entry_mut(r)) {
            e.start = start;
            e.duration = duration.max(1);
        }
    }

    /// Direct insertion for tests and debugging; bypasses every check.
    pub fn insert_raw(&mut self, d: DeviceId, entry: LockAccess) {
        self.members.entry(entry.routine).or_default().insert(d);
        self.order.add_node(entry.routine);
        self.lineages.get_mut(&d).expect("known device").entries.push(entry);
    }
}

#[cfg(test)]
mod tests;
