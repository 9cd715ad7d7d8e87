//! Placement of routines into the lineage table: first-come-first-served,
//! just-in-time and timeline scheduling, plus the plan reflow that keeps
//! every entry's planned interval realistic as execution drifts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::config::EngineConfig;
use crate::lineage::{EntryPlan, LineageTable};
use crate::model::{Command, CommandKind, DeviceId, Routine, RoutineId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Fcfs,
    Jit,
    Timeline,
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fcfs" => Ok(SchedulerKind::Fcfs),
            "jit" => Ok(SchedulerKind::Jit),
            "timeline" | "tl" => Ok(SchedulerKind::Timeline),
            other => Err(format!("unknown scheduler {other:?} (fcfs | jit | timeline)")),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchedulerKind::Fcfs => "fcfs",
            SchedulerKind::Jit => "jit",
            SchedulerKind::Timeline => "timeline",
        })
    }
}

/// Execution progress of one routine, as needed for planning.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Progress {
    /// Index of the next command to dispatch (or the one in flight).
    pub next: usize,
    /// Dispatch time of command `next` while it runs.
    pub in_flight: Option<SimTime>,
    /// Actual (start, end) of every command before `next`.
    pub times: Vec<(SimTime, SimTime)>,
}

impl Progress {
    pub fn started(&self) -> bool {
        self.next > 0 || self.in_flight.is_some()
    }

    pub fn start_time(&self) -> Option<SimTime> {
        self.times.first().map(|t| t.0).or(self.in_flight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WaitEntry {
    pub routine: RoutineId,
    pub ttl: u32,
}

/// Routines waiting for placement, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct WaitQueue {
    entries: Vec<WaitEntry>,
}

impl WaitQueue {
    pub fn push(&mut self, routine: RoutineId, ttl: u32) {
        self.entries.push(WaitEntry { routine, ttl });
    }

    pub fn remove(&mut self, routine: RoutineId) -> Option<WaitEntry> {
        let i = self.entries.iter().position(|e| e.routine == routine)?;
        Some(self.entries.remove(i))
    }

    pub fn get(&self, routine: RoutineId) -> Option<&WaitEntry> {
        self.entries.iter().find(|e| e.routine == routine)
    }

    pub fn entries(&self) -> &[WaitEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Test order: TTL-expired routines by id, then everyone else by id.
    pub fn priority_order(&self) -> Vec<RoutineId> {
        let mut v: Vec<&WaitEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| (e.ttl != 0, e.routine));
        v.into_iter().map(|e| e.routine).collect()
    }

    /// `scheduled` just left the queue: every earlier-id waiter sharing a
    /// device with it loses one unit of TTL.
    pub fn ttl_decrement(&mut self, scheduled: &Routine, lookup: impl Fn(RoutineId) -> BTreeSet<DeviceId>) {
        let devs = scheduled.devices();
        for e in &mut self.entries {
            if e.routine < scheduled.id && lookup(e.routine).iter().any(|d| devs.contains(d)) {
                e.ttl = e.ttl.saturating_sub(1);
            }
        }
    }

    pub fn decrement(&mut self, routine: RoutineId) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.routine == routine) {
            e.ttl = e.ttl.saturating_sub(1);
        }
    }
}

/// A free interval in a lineage: inserting at `index` places the routine
/// between entries `index - 1` and `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Gap {
    pub device: DeviceId,
    pub index: usize,
    pub start: SimTime,
    /// `None` for the unbounded tail gap.
    pub length: Option<u64>,
}

impl Gap {
    pub fn fits(&self, at: SimTime, duration: u64) -> bool {
        let s = at.max(self.start);
        self.length.is_none_or(|len| s + duration <= self.start + len)
    }
}

/// Routines serialized before and after a gap.
pub fn pre_post_sets(table: &LineageTable, gap: &Gap) -> (BTreeSet<RoutineId>, BTreeSet<RoutineId>) {
    table.pre_post_sets(gap.device, gap.index)
}

/// One device's share of a routine: first to last use.
#[derive(Debug, Clone, Copy)]
struct Access {
    device: DeviceId,
    first: usize,
    last: usize,
}

fn accesses(r: &Routine) -> Vec<Access> {
    let mut out: Vec<Access> = Vec::new();
    for (i, c) in r.commands.iter().enumerate() {
        match out.iter_mut().find(|a| a.device == c.device) {
            Some(a) => a.last = i,
            None => out.push(Access { device: c.device, first: i, last: i }),
        }
    }
    out
}

/// Bound on Timeline backtracking steps before falling back to tail gaps.
const SEARCH_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy)]
pub struct Planner {
    pub tau_timeout_ms: u64,
    pub pre_lease: bool,
    pub post_lease: bool,
}

impl Planner {
    pub fn new(cfg: &EngineConfig) -> Self {
        Planner { tau_timeout_ms: cfg.tau_timeout_ms, pre_lease: cfg.pre_lease, post_lease: cfg.post_lease }
    }

    /// Hold-time estimate: declared for long commands, a fixed timeout otherwise.
    pub fn estimate(&self, c: &Command) -> u64 {
        match c.kind {
            CommandKind::Long => c.duration_ms,
            CommandKind::Short => self.tau_timeout_ms,
        }
    }

    /// Uncontended runtime in the units reflow projects with: actual
    /// durations for finished commands, estimates for the rest.
    pub fn projected_ideal(&self, r: &Routine, prog: &Progress) -> u64 {
        r.commands
            .iter()
            .enumerate()
            .map(|(i, c)| if i < prog.next { prog.times[i].1 - prog.times[i].0 } else { self.estimate(c) })
            .sum()
    }

    /// Estimated offset of each command's start from the routine's start.
    fn offsets(&self, r: &Routine) -> Vec<u64> {
        let mut acc = 0;
        r.commands
            .iter()
            .map(|c| {
                let o = acc;
                acc += self.estimate(c);
                o
            })
            .collect()
    }

    fn plan_for(&self, r: &Routine, a: Access, index: usize, start: SimTime, now: SimTime, offs: &[u64]) -> EntryPlan {
        let span = offs[a.last] + self.estimate(&r.commands[a.last]) - offs[a.first];
        EntryPlan {
            device: a.device,
            index,
            start,
            duration: span.max(1),
            desired: r.commands[a.last].target.clone(),
            reads: r.commands[a.first..=a.last].iter().any(|c| c.device == a.device && c.reads),
            hold_estimate_ms: (start + offs[a.last] - offs[a.first]).saturating_sub(now),
        }
    }

    /// Free intervals of a lineage from `now` on, in start order.
    pub fn gaps(&self, table: &LineageTable, d: DeviceId, now: SimTime) -> Vec<Gap> {
        let lin = table.lineage(d);
        let open = lin.open_index();
        (open..=lin.entries.len())
            .map(|index| {
                let left_end = if index == 0 { now } else { lin.entries[index - 1].end() };
                let start = left_end.max(now);
                let length = lin.entries.get(index).map(|e| e.start.saturating_sub(start));
                Gap { device: d, index, start, length }
            })
            .collect()
    }

    /// Appends every access at the lineage tails.
    pub fn fcfs_plan(&self, table: &LineageTable, r: &Routine, now: SimTime) -> Vec<EntryPlan> {
        let offs = self.offsets(r);
        accesses(r)
            .into_iter()
            .map(|a| self.plan_for(r, a, table.lineage(a.device).entries.len(), now + offs[a.first], now, &offs))
            .collect()
    }

    /// Eligibility test: every device must be obtainable right now, either
    /// free, behind a holder done with it (post-lease) or ahead of a holder
    /// that has not used it yet (pre-lease).
    pub fn jit_plan(&self, table: &LineageTable, r: &Routine, now: SimTime) -> Option<Vec<EntryPlan>> {
        let offs = self.offsets(r);
        let mut plans = Vec::new();
        for a in accesses(r) {
            let lin = table.lineage(a.device);
            if lin.busy() {
                return None;
            }
            let index = match lin.head_index() {
                None => lin.entries.len(),
                Some(h) if !lin.entries[h].used && self.pre_lease => h,
                Some(_) => return None,
            };
            let mut p = self.plan_for(r, a, index, now, now, &offs);
            p.hold_estimate_ms = offs[a.last];
            if p.reads && index > 0 {
                return None;
            }
            plans.push(p);
        }
        let slots: Vec<(DeviceId, usize)> = plans.iter().map(|p| (p.device, p.index)).collect();
        table.validate(r.id, &slots).ok()?;
        Some(plans)
    }

    /// Backtracking gap search: for each access in first-use order take the
    /// earliest gap that fits, provided the accumulated before/after sets
    /// stay consistent; otherwise try the next gap.
    pub fn tl_plan(&self, table: &LineageTable, r: &Routine, now: SimTime) -> Vec<EntryPlan> {
        let offs = self.offsets(r);
        let acc = accesses(r);
        let gaps: Vec<Vec<Gap>> = acc
            .iter()
            .map(|a| {
                let g = self.gaps(table, a.device, now);
                if self.pre_lease {
                    g
                } else {
                    g.into_iter().filter(|g| g.length.is_none()).collect()
                }
            })
            .collect();
        let mut chosen = Vec::with_capacity(acc.len());
        let mut budget = SEARCH_BUDGET;
        if self.search(table, r, &acc, &offs, &gaps, 0, now, &mut chosen, &mut budget) {
            return chosen
                .iter()
                .zip(&acc)
                .map(|(&(index, start), &a)| self.plan_for(r, a, index, start, now, &offs))
                .collect();
        }
        // Budget exhausted: tails always validate.
        let mut t = now;
        let mut out = Vec::new();
        for (k, a) in acc.iter().enumerate() {
            let tail = *gaps[k].last().expect("tail gap");
            let s = t.max(tail.start);
            out.push(self.plan_for(r, *a, tail.index, s, now, &offs));
            if let Some(next) = acc.get(k + 1) {
                t = s + offs[next.first] - offs[a.first];
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        table: &LineageTable,
        r: &Routine,
        acc: &[Access],
        offs: &[u64],
        gaps: &[Vec<Gap>],
        k: usize,
        earliest: SimTime,
        chosen: &mut Vec<(usize, SimTime)>,
        budget: &mut usize,
    ) -> bool {
        if k == acc.len() {
            return true;
        }
        let a = acc[k];
        let span = offs[a.last] + self.estimate(&r.commands[a.last]) - offs[a.first];
        for g in &gaps[k] {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            if !g.fits(earliest, span) {
                continue;
            }
            let start = earliest.max(g.start);
            chosen.push((g.index, start));
            let slots: Vec<(DeviceId, usize)> =
                chosen.iter().zip(acc).map(|(&(index, _), a)| (a.device, index)).collect();
            if table.validate(r.id, &slots).is_ok() {
                let next = acc.get(k + 1).map_or(start, |n| start + offs[n.first] - offs[a.first]);
                if self.search(table, r, acc, offs, gaps, k + 1, next, chosen, budget) {
                    return true;
                }
            }
            chosen.pop();
        }
        false
    }

    /// Recomputes every live entry's planned interval as the earliest start
    /// allowed by its routine's own progress and by its left neighbour, in
    /// serialization order. Returns each live routine's planned finish.
    pub fn reflow<'a>(
        &self,
        table: &mut LineageTable,
        view: impl Fn(RoutineId) -> Option<(&'a Routine, &'a Progress)>,
        now: SimTime,
    ) -> BTreeMap<RoutineId, SimTime> {
        let live: BTreeSet<RoutineId> = table.members().collect();
        let order = table.order().topo_order_of(&live).expect("serialization order is acyclic");
        let mut finish = BTreeMap::new();
        for r in order {
            let Some((routine, prog)) = view(r) else { continue };
            let mut spans: BTreeMap<DeviceId, (SimTime, SimTime)> = BTreeMap::new();
            let mut prev_end = now;
            for (i, c) in routine.commands.iter().enumerate() {
                let (s, e) = if i < prog.next {
                    prog.times[i]
                } else if i == prog.next && prog.in_flight.is_some() {
                    let s = prog.in_flight.expect("in flight");
                    (s, (s + self.estimate(c)).max(now))
                } else {
                    let mut s = prev_end.max(now);
                    if routine.first_index_on(c.device) == Some(i) {
                        s = s.max(self.left_bound(table, &finish, c.device, r));
                    }
                    (s, s + self.estimate(c))
                };
                prev_end = e;
                spans.entry(c.device).and_modify(|sp| sp.1 = e).or_insert((s, e));
            }
            finish.insert(r, prev_end);
            for (d, (s, e)) in spans {
                table.set_plan(r, d, s, e.saturating_sub(s));
            }
        }
        finish
    }

    fn left_bound(&self, table: &LineageTable, finish: &BTreeMap<RoutineId, SimTime>, d: DeviceId, r: RoutineId) -> SimTime {
        let lin = table.lineage(d);
        let Some(pos) = lin.position(r) else { return 0 };
        if pos == 0 {
            return 0;
        }
        let left = &lin.entries[pos - 1];
        if self.post_lease {
            left.end()
        } else {
            finish.get(&left.routine).copied().unwrap_or(left.end()).max(left.end())
        }
    }
}

#[cfg(test)]
mod tests;
