//! Discrete-event execution of a workload under one visibility model.

mod failure;
mod order;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::failure::{classify_failure, decide, timing_case, ExecutionWindow, FailureDecision, Outage, TimingCase};
pub use self::order::{emit_serialization_order, OrderItem};

use crate::clock::{SimClock, SimTime};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::fabric::{CommandOutcome, Fabric, FailureDetector};
use crate::lineage::{AcquireOutcome, Activation, LeasePolicy, LeaseRecord, LineageTable};
use crate::model::{conflicts, DeviceEvent, DeviceId, DeviceState, HealthEvent, Routine, RoutineId};
use crate::scheduler::{Planner, Progress, SchedulerKind, WaitQueue};
use crate::trace::{Trace, TraceKind};
use crate::workload::{Injection, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum VisibilityModel {
    /// No isolation at all.
    Wv,
    /// One routine at a time.
    Gsv,
    /// GSV that also aborts on failures of devices the routine never uses.
    Sgsv,
    /// Routines with disjoint devices run in parallel.
    Psv,
    /// Lineage-table scheduling with the given placement policy.
    Ev(SchedulerKind),
}

impl VisibilityModel {
    /// The models compared throughout, EV with Timeline scheduling.
    pub const MAIN: [VisibilityModel; 4] =
        [VisibilityModel::Wv, VisibilityModel::Gsv, VisibilityModel::Psv, VisibilityModel::Ev(SchedulerKind::Timeline)];

    pub fn is_ev(self) -> bool {
        matches!(self, VisibilityModel::Ev(_))
    }
}

impl fmt::Display for VisibilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VisibilityModel::Wv => f.write_str("wv"),
            VisibilityModel::Gsv => f.write_str("gsv"),
            VisibilityModel::Sgsv => f.write_str("sgsv"),
            VisibilityModel::Psv => f.write_str("psv"),
            VisibilityModel::Ev(s) => write!(f, "ev-{s}"),
        }
    }
}

impl FromStr for VisibilityModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Ok(match s.as_str() {
            "wv" => VisibilityModel::Wv,
            "gsv" => VisibilityModel::Gsv,
            "sgsv" | "s-gsv" => VisibilityModel::Sgsv,
            "psv" => VisibilityModel::Psv,
            "ev" => VisibilityModel::Ev(SchedulerKind::Timeline),
            other => match other.strip_prefix("ev-").or_else(|| other.strip_prefix("ev/")) {
                Some(sched) => VisibilityModel::Ev(sched.parse().map_err(Error::InvalidParam)?),
                None => return Err(Error::InvalidParam(format!("unknown visibility model `{s}`"))),
            },
        })
    }
}

impl From<VisibilityModel> for String {
    fn from(m: VisibilityModel) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for VisibilityModel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Committed,
    Aborted,
    /// Still pending when the event queue drained; indicates an engine bug.
    Unfinished,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Check lineage-table invariants after every event.
    pub check_invariants: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: VisibilityModel,
    pub trace: Trace,
    /// Logical end state: the fabric, with rollback corrections that are
    /// still waiting for their device to come back already applied.
    pub final_states: Vec<DeviceState>,
    /// Serialization order; `None` under WV, which keeps none.
    pub order: Option<Vec<OrderItem>>,
    pub outcomes: Vec<Outcome>,
    /// Times each routine was overtaken by a later sharer while waiting.
    pub bypasses: Vec<u32>,
    pub violations: Vec<String>,
}

impl RunResult {
    pub fn committed(&self) -> impl Iterator<Item = RoutineId> + '_ {
        self.ids_with(Outcome::Committed)
    }

    pub fn aborted(&self) -> impl Iterator<Item = RoutineId> + '_ {
        self.ids_with(Outcome::Aborted)
    }

    fn ids_with(&self, o: Outcome) -> impl Iterator<Item = RoutineId> + '_ {
        self.outcomes.iter().enumerate().filter(move |(_, x)| **x == o).map(|(i, _)| RoutineId(i as u32))
    }

    pub fn makespan(&self) -> SimTime {
        self.trace.end_time()
    }
}

pub fn run(model: VisibilityModel, workload: &Workload, config: &EngineConfig) -> Result<RunResult> {
    run_with(model, workload, config, RunOptions::default())
}

pub fn run_with(model: VisibilityModel, workload: &Workload, config: &EngineConfig, opts: RunOptions) -> Result<RunResult> {
    workload.validate()?;
    config.validate()?;
    Engine::new(model, workload, config, opts).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Waiting,
    Placed,
    Committed,
    Aborted,
}

struct RState {
    phase: Phase,
    prog: Progress,
    started: Option<SimTime>,
    token: u64,
    executed: usize,
    writes: BTreeMap<DeviceId, usize>,
    /// Devices that failed after the routine's last access of them.
    after_fail: BTreeSet<DeviceId>,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrive(RoutineId),
    CmdDone { r: RoutineId, token: u64 },
    CmdFail { r: RoutineId, token: u64 },
    Ping,
    Detect(DeviceEvent),
    Wake,
}

struct Engine<'w> {
    model: VisibilityModel,
    cfg: EngineConfig,
    w: &'w Workload,
    opts: RunOptions,
    clock: SimClock<Ev>,
    trace: Trace,
    fabric: Fabric,
    detector: FailureDetector,
    known_down: BTreeSet<DeviceId>,
    table: Option<LineageTable>,
    planner: Planner,
    queue: WaitQueue,
    rs: Vec<RState>,
    running: BTreeSet<RoutineId>,
    pending_fix: BTreeMap<DeviceId, DeviceState>,
    next_inject: usize,
    open: usize,
    /// A lock was released since the last Timeline pass.
    released: bool,
    deferred: BTreeSet<RoutineId>,
    wakes: BTreeSet<SimTime>,
    bypasses: Vec<u32>,
    violations: Vec<String>,
}

const MAX_VIOLATIONS: usize = 64;

impl<'w> Engine<'w> {
    fn new(model: VisibilityModel, w: &'w Workload, cfg: &EngineConfig, opts: RunOptions) -> Self {
        let policy = if model.is_ev() {
            LeasePolicy { pre_lease: cfg.pre_lease, post_lease: cfg.post_lease, leniency: cfg.leniency }
        } else {
            LeasePolicy { pre_lease: false, post_lease: false, leniency: cfg.leniency }
        };
        let n = w.routines.len();
        Engine {
            model,
            cfg: cfg.clone(),
            w,
            opts,
            clock: SimClock::new(),
            trace: Trace::default(),
            fabric: Fabric::new(&w.devices, &w.faults),
            detector: FailureDetector::new(cfg.detector, w.devices.len()),
            known_down: BTreeSet::new(),
            table: (model != VisibilityModel::Wv).then(|| LineageTable::new(&w.devices, policy)),
            planner: Planner::new(cfg),
            queue: WaitQueue::default(),
            rs: (0..n)
                .map(|_| RState {
                    phase: Phase::Pending,
                    prog: Progress::default(),
                    started: None,
                    token: 0,
                    executed: 0,
                    writes: BTreeMap::new(),
                    after_fail: BTreeSet::new(),
                })
                .collect(),
            running: BTreeSet::new(),
            pending_fix: BTreeMap::new(),
            next_inject: 0,
            open: n,
            released: false,
            deferred: BTreeSet::new(),
            wakes: BTreeSet::new(),
            bypasses: vec![0; n],
            violations: Vec::new(),
        }
    }

    fn st(&mut self, r: RoutineId) -> &mut RState {
        &mut self.rs[r.0 as usize]
    }

    fn routine(&self, r: RoutineId) -> &'w Routine {
        self.w.routine(r)
    }

    fn run(mut self) -> Result<RunResult> {
        match self.w.injection {
            Injection::Timed => {
                for r in &self.w.routines {
                    self.clock.schedule(r.submit_time_ms, Ev::Arrive(r.id));
                }
                self.next_inject = self.w.routines.len();
            }
            Injection::ClosedLoop { concurrency } => {
                let k = concurrency.min(self.w.routines.len());
                for i in 0..k {
                    self.clock.schedule(0, Ev::Arrive(RoutineId(i as u32)));
                }
                self.next_inject = k;
            }
        }
        if self.fabric.has_faults() {
            self.clock.schedule(0, Ev::Ping);
        }
        while let Some((now, ev)) = self.clock.advance_to_next_event() {
            self.handle(now, ev);
            self.pump(now);
            if self.opts.check_invariants {
                self.check(now);
            }
        }
        if self.open > 0 {
            self.violations.push(format!("{} routines never finished", self.open));
        }
        self.finish_run()
    }

    fn finish_run(self) -> Result<RunResult> {
        let mut final_states = self.fabric.states();
        for (d, s) in &self.pending_fix {
            final_states[d.0 as usize] = s.clone();
        }
        let order = match &self.table {
            Some(t) if self.model != VisibilityModel::Wv => Some(emit_serialization_order(&self.trace, t.order())?),
            _ => None,
        };
        let outcomes = self
            .rs
            .iter()
            .map(|s| match s.phase {
                Phase::Committed => Outcome::Committed,
                Phase::Aborted => Outcome::Aborted,
                _ => Outcome::Unfinished,
            })
            .collect();
        Ok(RunResult {
            model: self.model,
            trace: self.trace,
            final_states,
            order,
            outcomes,
            bypasses: self.bypasses,
            violations: self.violations,
        })
    }

    fn handle(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Arrive(r) => {
                self.st(r).phase = Phase::Waiting;
                self.trace.push(now, TraceKind::RoutineSubmit { routine: r });
                if self.model == VisibilityModel::Wv {
                    self.st(r).phase = Phase::Placed;
                    self.running.insert(r);
                } else {
                    self.queue.push(r, self.cfg.ttl_init);
                }
            }
            Ev::CmdDone { r, token } => {
                if self.live_token(r, token) {
                    self.command_done(r, now);
                }
            }
            Ev::CmdFail { r, token } => {
                if self.live_token(r, token) {
                    self.command_failed(r, now);
                }
            }
            Ev::Ping => {
                let faulty: Vec<DeviceId> = self.fabric.faulty_devices().collect();
                for e in self.detector.detector_step(now, &self.fabric, faulty) {
                    match e.kind {
                        HealthEvent::Failure => {
                            self.clock.schedule(e.detect_time, Ev::Detect(e));
                        }
                        HealthEvent::Restart => self.process_detection(e, now),
                    }
                }
                if self.open > 0 {
                    let next = self.detector.next_ping_after(now);
                    self.clock.schedule(next, Ev::Ping);
                }
            }
            Ev::Detect(e) => self.process_detection(e, now),
            Ev::Wake => {
                self.wakes.remove(&now);
            }
        }
    }

    fn live_token(&self, r: RoutineId, token: u64) -> bool {
        let s = &self.rs[r.0 as usize];
        s.phase == Phase::Placed && s.token == token && s.prog.in_flight.is_some()
    }

    /// Admission, lock hand-over and dispatch until nothing moves.
    fn pump(&mut self, now: SimTime) {
        loop {
            let mut changed = false;
            if self.model.is_ev() {
                self.reflow(now);
            }
            changed |= self.admit(now);
            if let Some(table) = self.table.as_mut() {
                let (acts, leases) = table.refresh_all(now);
                self.note_leases(now, leases);
                for a in acts {
                    if let Activation::At(_, t) = a {
                        self.schedule_wake(now, t);
                    }
                }
            }
            if self.model.is_ev() {
                changed |= self.revoke(now);
            }
            let running: Vec<RoutineId> = self.running.iter().copied().collect();
            for r in running {
                changed |= self.advance(r, now);
            }
            if !changed {
                break;
            }
        }
        if let Some(t) = self.table.as_ref().and_then(LineageTable::next_deadline) {
            self.schedule_wake(now, t);
        }
    }

    fn schedule_wake(&mut self, now: SimTime, t: SimTime) {
        if t > now && self.wakes.insert(t) {
            self.clock.schedule(t, Ev::Wake);
        }
    }

    fn reflow(&mut self, now: SimTime) {
        let (w, rs) = (self.w, &self.rs);
        if let Some(table) = self.table.as_mut() {
            self.planner.reflow(table, |x| Some((w.routine(x), &rs[x.0 as usize].prog)), now);
        }
    }

    fn note_leases(&mut self, now: SimTime, leases: Vec<LeaseRecord>) {
        for l in leases {
            self.trace.push(
                now,
                TraceKind::LeaseGrant { device: l.device, src: l.src, dst: l.dst, lease: l.kind, revoke_at: l.revoke_at },
            );
        }
    }

    fn check(&mut self, now: SimTime) {
        if self.violations.len() >= MAX_VIOLATIONS {
            return;
        }
        if let Some(t) = &self.table {
            for v in t.check_invariants() {
                self.violations.push(format!("t={now}: {:?} on {:?}: {}", v.kind, v.device, v.detail));
            }
        }
    }

    fn must_hits_down(&self, r: RoutineId) -> bool {
        self.routine(r).commands.iter().any(|c| c.is_must() && self.known_down.contains(&c.device))
    }

    fn fail_fast(&self, r: RoutineId) -> bool {
        self.model.is_ev() && self.cfg.fail_fast && self.must_hits_down(r)
    }

    // ---- admission -------------------------------------------------------

    fn admit(&mut self, now: SimTime) -> bool {
        match self.model {
            VisibilityModel::Wv => false,
            VisibilityModel::Gsv | VisibilityModel::Sgsv => match self.queue.entries().first() {
                Some(e) if self.running.is_empty() => {
                    let r = e.routine;
                    self.place_now(r, now);
                    true
                }
                _ => false,
            },
            VisibilityModel::Psv => {
                let mut changed = false;
                let mut passed_over: Vec<RoutineId> = Vec::new();
                let waiting: Vec<RoutineId> = self.queue.entries().iter().map(|e| e.routine).collect();
                for r in waiting {
                    let me = self.routine(r);
                    let clash = self.running.iter().chain(&passed_over).any(|x| conflicts(me, self.routine(*x)));
                    if clash {
                        passed_over.push(r);
                    } else {
                        self.place_now(r, now);
                        changed = true;
                    }
                }
                changed
            }
            VisibilityModel::Ev(SchedulerKind::Fcfs) => {
                let waiting: Vec<RoutineId> = self.queue.entries().iter().map(|e| e.routine).collect();
                for &r in &waiting {
                    if self.fail_fast(r) {
                        self.abort(r, now);
                        continue;
                    }
                    let table = self.table.as_ref().expect("EV keeps a table");
                    let plans = self.planner.fcfs_plan(table, self.routine(r), now);
                    self.insert(r, plans, now);
                }
                !waiting.is_empty()
            }
            VisibilityModel::Ev(SchedulerKind::Jit) => self.admit_jit(now),
            VisibilityModel::Ev(SchedulerKind::Timeline) => self.admit_timeline(now),
        }
    }

    /// GSV/PSV admission: every lock is free, take them all.
    fn place_now(&mut self, r: RoutineId, now: SimTime) {
        let table = self.table.as_ref().expect("table");
        let plans = self
            .planner
            .fcfs_plan(table, self.routine(r), now)
            .into_iter()
            .map(|p| crate::lineage::EntryPlan { start: now, ..p })
            .collect();
        self.insert(r, plans, now);
    }

    fn insert(&mut self, r: RoutineId, plans: Vec<crate::lineage::EntryPlan>, now: SimTime) {
        let leases = self.table.as_mut().expect("table").insert(r, plans, now);
        self.note_leases(now, leases);
        self.placed(r);
    }

    fn placed(&mut self, r: RoutineId) {
        self.queue.remove(r);
        self.deferred.remove(&r);
        self.st(r).phase = Phase::Placed;
        self.running.insert(r);
    }

    fn admit_jit(&mut self, now: SimTime) -> bool {
        let mut changed = false;
        let mut blocked: BTreeSet<DeviceId> = BTreeSet::new();
        for r in self.queue.priority_order() {
            let routine = self.routine(r);
            let devs = routine.devices();
            if devs.iter().any(|d| blocked.contains(d)) {
                continue;
            }
            if self.fail_fast(r) {
                self.abort(r, now);
                changed = true;
                continue;
            }
            let ttl = self.queue.get(r).map_or(0, |e| e.ttl);
            let table = self.table.as_mut().expect("table");
            let outcome = match self.planner.jit_plan(table, routine, now) {
                Some(plans) => table.acquire_all_or_none(r, plans, now),
                None => AcquireOutcome::Retry,
            };
            match outcome {
                AcquireOutcome::Acquired(leases) => {
                    self.note_leases(now, leases);
                    self.queue.remove(r);
                    let w = self.w;
                    for e in self.queue.entries() {
                        if e.routine < r && conflicts(routine, w.routine(e.routine)) {
                            self.bypasses[e.routine.0 as usize] += 1;
                        }
                    }
                    self.queue.ttl_decrement(routine, |x| w.routine(x).devices());
                    self.placed(r);
                    changed = true;
                }
                AcquireOutcome::Retry => {
                    if ttl == 0 {
                        blocked.extend(devs);
                    }
                }
            }
        }
        changed
    }

    fn admit_timeline(&mut self, now: SimTime) -> bool {
        let retry = std::mem::take(&mut self.released);
        let mut changed = false;
        let waiting: Vec<(RoutineId, u32)> = self.queue.entries().iter().map(|e| (e.routine, e.ttl)).collect();
        for (r, ttl) in waiting {
            if self.fail_fast(r) {
                self.abort(r, now);
                changed = true;
                continue;
            }
            if self.deferred.contains(&r) && !retry {
                continue;
            }
            let table = self.table.as_ref().expect("table");
            let plans = self.planner.tl_plan(table, self.routine(r), now);
            if ttl > 0 && self.would_stretch(r, &plans, now) {
                self.queue.decrement(r);
                self.deferred.insert(r);
                continue;
            }
            self.insert(r, plans, now);
            changed = true;
        }
        changed
    }

    /// Whether placing `r` as planned pushes some started routine past the
    /// stretch threshold, and further than it already is.
    fn would_stretch(&self, r: RoutineId, plans: &[crate::lineage::EntryPlan], now: SimTime) -> bool {
        let started: Vec<(RoutineId, SimTime)> =
            self.running.iter().filter_map(|x| self.rs[x.0 as usize].started.map(|s| (*x, s))).collect();
        if started.is_empty() {
            return false;
        }
        let table = self.table.as_ref().expect("table");
        let view = |x: RoutineId| Some((self.routine(x), &self.rs[x.0 as usize].prog));
        let mut before_t = table.clone();
        let before = self.planner.reflow(&mut before_t, view, now);
        let mut after_t = table.clone();
        after_t.insert(r, plans.to_vec(), now);
        let after = self.planner.reflow(&mut after_t, view, now);
        started.into_iter().any(|(x, s)| {
            let (Some(&a), Some(&b)) = (after.get(&x), before.get(&x)) else { return false };
            let ideal = self.planner.projected_ideal(self.routine(x), &self.rs[x.0 as usize].prog).max(1) as f64;
            a > b && (a - s) as f64 / ideal > self.cfg.stretch_threshold
        })
    }

    /// Expired pre-leases whose lender is waiting for the device abort the
    /// borrower, unless the borrower already began its last access.
    fn revoke(&mut self, now: SimTime) -> bool {
        let (w, rs) = (self.w, &self.rs);
        let Some(table) = self.table.as_mut() else { return false };
        let revoked = table.revoke_expired_leases(now, |l| {
            let src = &rs[l.src.0 as usize];
            let src_cmds = &w.routine(l.src).commands;
            let waiting = src.phase == Phase::Placed
                && src.prog.in_flight.is_none()
                && src_cmds.get(src.prog.next).is_some_and(|c| c.device == l.device);
            let dst = &rs[l.dst.0 as usize];
            let Some(last) = w.routine(l.dst).last_index_on(l.device) else { return false };
            let begun_last = dst.prog.next > last || (dst.prog.next == last && dst.prog.in_flight.is_some());
            waiting && !begun_last
        });
        for l in &revoked {
            self.trace.push(now, TraceKind::LeaseRevoke { device: l.device, src: l.src, dst: l.dst });
            self.abort(l.dst, now);
        }
        !revoked.is_empty()
    }

    // ---- execution -------------------------------------------------------

    /// Dispatches the routine's next command if it may; returns whether
    /// anything happened.
    fn advance(&mut self, r: RoutineId, now: SimTime) -> bool {
        let mut progressed = false;
        loop {
            let s = &self.rs[r.0 as usize];
            if s.phase != Phase::Placed || s.prog.in_flight.is_some() {
                return progressed;
            }
            let routine = self.routine(r);
            let i = s.prog.next;
            let Some(c) = routine.commands.get(i) else {
                self.finish(r, now);
                return true;
            };
            if self.table.as_ref().is_some_and(|t| !t.can_use(r, c.device)) {
                return progressed;
            }
            if s.started.is_none() {
                if self.fail_fast(r) {
                    self.abort(r, now);
                    return true;
                }
                self.st(r).started = Some(now);
                self.trace.push(now, TraceKind::RoutineStart { routine: r });
            }
            if let Some(t) = self.table.as_mut() {
                t.note_use(r, c.device);
            }
            self.trace.push(now, TraceKind::CmdStart { routine: r, index: i, device: c.device });
            self.st(r).prog.in_flight = Some(now);
            progressed = true;
            if self.known_down.contains(&c.device) {
                self.command_failed(r, now);
                continue;
            }
            let st = self.st(r);
            st.token += 1;
            let token = st.token;
            match self.fabric.execute_command(c.device, c.duration_ms, now) {
                CommandOutcome::Completes(t) => self.clock.schedule(t, Ev::CmdDone { r, token }),
                CommandOutcome::Fails(t) => self.clock.schedule(t, Ev::CmdFail { r, token }),
            };
            return true;
        }
    }

    fn command_done(&mut self, r: RoutineId, now: SimTime) {
        let i = self.rs[r.0 as usize].prog.next;
        let c = &self.routine(r).commands[i];
        let applied = self.fabric.apply(c.device, c.target.clone(), now);
        debug_assert!(applied, "completed command on a down device");
        self.detector.note_heard(c.device, now);
        if let Some(t) = self.table.as_mut() {
            t.record_write(r, c.device, c.target.clone());
        }
        let st = self.st(r);
        st.executed += 1;
        *st.writes.entry(c.device).or_default() += 1;
        self.trace.push(
            now,
            TraceKind::CmdEnd { routine: r, index: i, device: c.device, state: c.target.clone(), ok: true },
        );
        self.complete_command(r, now);
    }

    fn complete_command(&mut self, r: RoutineId, now: SimTime) {
        let st = self.st(r);
        let i = st.prog.next;
        let began = st.prog.in_flight.take().expect("command in flight");
        st.prog.times.push((began, now));
        st.prog.next += 1;
        let d = self.routine(r).commands[i].device;
        if self.routine(r).last_index_on(d) == Some(i) {
            if let Some(t) = self.table.as_mut() {
                let (_, leases) = t.transition_on_release(r, d, now);
                self.note_leases(now, leases);
                self.released = true;
            }
        }
    }

    /// The in-flight command of `r` failed, either mid-way or because its
    /// device was already known to be down.
    fn command_failed(&mut self, r: RoutineId, now: SimTime) {
        let i = self.rs[r.0 as usize].prog.next;
        let c = &self.routine(r).commands[i];
        let fresh = !self.known_down.contains(&c.device);
        self.detector.command_failed(c.device, now);
        let event = DeviceEvent { device: c.device, kind: HealthEvent::Failure, detect_time: now };
        if fresh {
            self.record_detection(event, now);
        }
        self.trace.push(
            now,
            TraceKind::CmdEnd { routine: r, index: i, device: c.device, state: c.target.clone(), ok: false },
        );
        self.complete_command(r, now);
        self.apply_must_best_effort(r, i, now);
        if fresh {
            let skip = matches!(self.model, VisibilityModel::Psv | VisibilityModel::Ev(_)).then_some(r);
            self.classify_running(event, now, skip);
        }
    }

    /// A failed Must command aborts its routine; a failed best-effort one
    /// is reported and skipped, unless the routine already changed the device.
    fn apply_must_best_effort(&mut self, r: RoutineId, i: usize, now: SimTime) {
        let c = &self.routine(r).commands[i];
        let wrote_before = self.rs[r.0 as usize].writes.get(&c.device).copied().unwrap_or(0) > 0;
        let abort = match self.model {
            VisibilityModel::Wv => false,
            _ if c.is_must() => true,
            VisibilityModel::Psv | VisibilityModel::Ev(_) => wrote_before,
            _ => false,
        };
        if abort {
            self.abort(r, now);
        } else {
            self.trace.push(now, TraceKind::Feedback { routine: r, index: i, device: c.device });
        }
    }

    fn record_detection(&mut self, e: DeviceEvent, now: SimTime) {
        match e.kind {
            HealthEvent::Failure => {
                self.known_down.insert(e.device);
                self.trace.push(now, TraceKind::DeviceFail { device: e.device });
            }
            HealthEvent::Restart => {
                self.known_down.remove(&e.device);
                self.trace.push(now, TraceKind::DeviceRestart { device: e.device });
                if let Some(s) = self.pending_fix.remove(&e.device) {
                    self.fabric.apply(e.device, s, now);
                }
            }
        }
    }

    fn process_detection(&mut self, e: DeviceEvent, now: SimTime) {
        let down = self.known_down.contains(&e.device);
        let fresh = match e.kind {
            HealthEvent::Failure => !down,
            HealthEvent::Restart => down,
        };
        if fresh {
            self.record_detection(e, now);
            self.classify_running(e, now, None);
        }
    }

    /// Applies the failure decision table to every started routine.
    fn classify_running(&mut self, e: DeviceEvent, now: SimTime, skip: Option<RoutineId>) {
        let d = e.device;
        let mut doomed = Vec::new();
        for &x in &self.running {
            let s = &self.rs[x.0 as usize];
            if Some(x) == skip || s.started.is_none() {
                continue;
            }
            let routine = self.routine(x);
            match self.model {
                VisibilityModel::Wv => {}
                VisibilityModel::Sgsv => doomed.push(x),
                VisibilityModel::Gsv => {
                    if routine.touches(d) {
                        doomed.push(x);
                    }
                }
                VisibilityModel::Psv | VisibilityModel::Ev(_) => {
                    let (Some(first), Some(last)) = (routine.first_index_on(d), routine.last_index_on(d)) else {
                        continue;
                    };
                    let next = s.prog.next;
                    let touched = first < next || (first == next && s.prog.in_flight.is_some());
                    if !touched {
                        continue;
                    }
                    if next > last {
                        if e.kind == HealthEvent::Failure {
                            self.rs[x.0 as usize].after_fail.insert(d);
                        }
                    } else {
                        doomed.push(x);
                    }
                }
            }
        }
        for x in doomed {
            self.abort(x, now);
        }
    }

    fn finish(&mut self, r: RoutineId, now: SimTime) {
        if self.model == VisibilityModel::Psv {
            let still_down = self.rs[r.0 as usize].after_fail.iter().any(|d| self.known_down.contains(d));
            if still_down {
                self.abort(r, now);
                return;
            }
        }
        if let Some(t) = self.table.as_mut() {
            let (_, leases) = t.commit_with_compaction(r, now);
            self.note_leases(now, leases);
            self.released = true;
        }
        self.trace.push(now, TraceKind::Commit { routine: r });
        self.st(r).phase = Phase::Committed;
        self.retire(r, now);
    }

    fn abort(&mut self, r: RoutineId, now: SimTime) {
        debug_assert!(self.model != VisibilityModel::Wv, "WV never aborts");
        let phase = self.rs[r.0 as usize].phase;
        if matches!(phase, Phase::Committed | Phase::Aborted) {
            return;
        }
        self.queue.remove(r);
        self.deferred.remove(&r);
        let total = self.routine(r).commands.len();
        let st = self.st(r);
        st.token += 1;
        st.prog.in_flight = None;
        st.phase = Phase::Aborted;
        let executed = st.executed;
        self.trace.push(now, TraceKind::Abort { routine: r, executed, total });
        if let Some(table) = self.table.as_mut() {
            if table.is_member(r) {
                let (fabric, pending) = (&self.fabric, &self.pending_fix);
                let (fixes, _, leases) = table.abort_rollback(r, now, |d| {
                    pending.get(&d).cloned().unwrap_or_else(|| fabric.state(d).clone())
                });
                for f in fixes {
                    self.trace.push(now, TraceKind::RollbackCmd { routine: r, device: f.device, state: f.state.clone() });
                    if self.fabric.is_up(f.device, now) && !self.known_down.contains(&f.device) {
                        self.fabric.apply(f.device, f.state, now);
                    } else {
                        self.pending_fix.insert(f.device, f.state);
                    }
                }
                self.note_leases(now, leases);
                self.released = true;
            }
        }
        self.retire(r, now);
    }

    fn retire(&mut self, r: RoutineId, now: SimTime) {
        self.running.remove(&r);
        self.open -= 1;
        if self.next_inject < self.w.routines.len() {
            if let Injection::ClosedLoop { .. } = self.w.injection {
                self.clock.schedule(now, Ev::Arrive(RoutineId(self.next_inject as u32)));
                self.next_inject += 1;
            }
        }
    }
}
