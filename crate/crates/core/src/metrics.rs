//! Observables computed from a finished run's trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::engine::{OrderItem, RunResult, VisibilityModel};
use crate::model::{DeviceId, RoutineId};
use crate::oracle::run_incongruent;
use crate::trace::{Trace, TraceKind};
use crate::workload::Workload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: VisibilityModel,
    pub routines: usize,
    pub committed: usize,
    pub aborted: usize,
    pub makespan_ms: SimTime,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p90_ms: f64,
    pub latency_p95_ms: f64,
    /// Mean of each committed routine's latency over its ideal runtime.
    pub latency_norm_mean: f64,
    pub temporary_incongruence: f64,
    /// `None` when the oracle was skipped or too many routines committed.
    pub final_incongruent: Option<bool>,
    pub parallelism_level: f64,
    pub order_mismatch_pct: f64,
    pub abort_rate: f64,
    pub rollback_overhead: f64,
    pub stretch_mean: f64,
    pub stretch_p95: f64,
    pub stretch_max: f64,
}

pub fn report(w: &Workload, res: &RunResult, oracle: bool) -> MetricsReport {
    let trace = &res.trace;
    let lat: Vec<f64> = latencies(trace).values().map(|x| *x as f64).collect();
    let stretch = stretch_factors(w, trace);
    let submitted = submissions(trace);
    let committed = res.committed().count();
    let aborted = res.aborted().count();
    let final_order: Vec<RoutineId> = match &res.order {
        Some(o) => o
            .iter()
            .filter_map(|i| match i {
                OrderItem::Routine { routine } => Some(*routine),
                OrderItem::Event { .. } => None,
            })
            .collect(),
        None => commit_order(trace),
    };
    MetricsReport {
        model: res.model,
        routines: w.routines.len(),
        committed,
        aborted,
        makespan_ms: res.makespan(),
        latency_mean_ms: mean(&lat),
        latency_p50_ms: percentile(&lat, 50.0),
        latency_p90_ms: percentile(&lat, 90.0),
        latency_p95_ms: percentile(&lat, 95.0),
        latency_norm_mean: mean(&normalized_latencies(w, trace)),
        temporary_incongruence: temporary_incongruence(trace),
        final_incongruent: if oracle { run_incongruent(w, res) } else { None },
        parallelism_level: parallelism_level(trace),
        order_mismatch_pct: order_mismatch(&final_order, &submitted),
        abort_rate: if w.routines.is_empty() { 0.0 } else { aborted as f64 / w.routines.len() as f64 },
        rollback_overhead: rollback_overhead(trace),
        stretch_mean: mean(&stretch),
        stretch_p95: percentile(&stretch, 95.0),
        stretch_max: stretch.iter().copied().fold(0.0, f64::max),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Nearest-rank percentile; 0 for an empty sample.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn submissions(trace: &Trace) -> Vec<RoutineId> {
    trace
        .iter()
        .filter_map(|e| match e.kind {
            TraceKind::RoutineSubmit { routine } => Some(routine),
            _ => None,
        })
        .collect()
}

fn commit_order(trace: &Trace) -> Vec<RoutineId> {
    trace
        .iter()
        .filter_map(|e| match e.kind {
            TraceKind::Commit { routine } => Some(routine),
            _ => None,
        })
        .collect()
}

/// Submission-to-commit time of every committed routine.
pub fn latencies(trace: &Trace) -> BTreeMap<RoutineId, SimTime> {
    let mut submit = BTreeMap::new();
    let mut out = BTreeMap::new();
    for e in trace.iter() {
        match e.kind {
            TraceKind::RoutineSubmit { routine } => {
                submit.insert(routine, e.time);
            }
            TraceKind::Commit { routine } => {
                out.insert(routine, e.time - submit.get(&routine).copied().unwrap_or(0));
            }
            _ => {}
        }
    }
    out
}

/// Latency of every committed routine divided by its ideal runtime.
pub fn normalized_latencies(w: &Workload, trace: &Trace) -> Vec<f64> {
    latencies(trace)
        .into_iter()
        .map(|(r, l)| l as f64 / w.routine(r).ideal_runtime().max(1) as f64)
        .collect()
}

/// Fraction of submitted routines that saw another routine write a device
/// they had already written, no later than their own end.
pub fn temporary_incongruence(trace: &Trace) -> f64 {
    let mut first_write: BTreeMap<RoutineId, BTreeMap<DeviceId, usize>> = BTreeMap::new();
    let mut end: BTreeMap<RoutineId, SimTime> = BTreeMap::new();
    let mut writes: Vec<(usize, SimTime, RoutineId, DeviceId)> = Vec::new();
    let mut submitted = 0usize;
    for (seq, e) in trace.iter().enumerate() {
        match e.kind {
            TraceKind::RoutineSubmit { .. } => submitted += 1,
            TraceKind::CmdEnd { routine, device, ok: true, .. } => {
                first_write.entry(routine).or_default().entry(device).or_insert(seq);
                writes.push((seq, e.time, routine, device));
            }
            TraceKind::Commit { routine } | TraceKind::Abort { routine, .. } => {
                end.insert(routine, e.time);
            }
            _ => {}
        }
    }
    if submitted == 0 {
        return 0.0;
    }
    let hit = first_write
        .iter()
        .filter(|(r, mods)| {
            let until = end.get(r).copied().unwrap_or(SimTime::MAX);
            writes.iter().any(|(seq, t, other, d)| {
                other != *r && *t <= until && mods.get(d).is_some_and(|first| first < seq)
            })
        })
        .count();
    hit as f64 / submitted as f64
}

/// Mean number of running routines, sampled whenever one starts or ends.
pub fn parallelism_level(trace: &Trace) -> f64 {
    let mut running = BTreeSet::new();
    let mut samples = Vec::new();
    for e in trace.iter() {
        match e.kind {
            TraceKind::RoutineStart { routine } => {
                running.insert(routine);
                samples.push(running.len() as f64);
            }
            TraceKind::Commit { routine } | TraceKind::Abort { routine, .. }
                if running.contains(&routine) => {
                    samples.push(running.len() as f64);
                    running.remove(&routine);
                }
            _ => {}
        }
    }
    mean(&samples)
}

/// Kendall-tau distance between the final order and the submission order,
/// over the routines in `final_order`, as a percentage of the maximum.
pub fn order_mismatch(final_order: &[RoutineId], submission: &[RoutineId]) -> f64 {
    let rank: BTreeMap<RoutineId, usize> = submission.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let seq: Vec<usize> = final_order.iter().filter_map(|r| rank.get(r).copied()).collect();
    let n = seq.len();
    if n < 2 {
        return 0.0;
    }
    let inversions: usize = (0..n).map(|i| seq[i + 1..].iter().filter(|&&x| x < seq[i]).count()).sum();
    100.0 * inversions as f64 / (n * (n - 1) / 2) as f64
}

/// Mean fraction of its commands an aborted routine had executed.
pub fn rollback_overhead(trace: &Trace) -> f64 {
    let fractions: Vec<f64> = trace
        .iter()
        .filter_map(|e| match e.kind {
            TraceKind::Abort { executed, total, .. } if total > 0 => Some(executed as f64 / total as f64),
            _ => None,
        })
        .collect();
    mean(&fractions)
}

/// Start-to-commit time over ideal runtime, per committed routine.
pub fn stretch_factors(w: &Workload, trace: &Trace) -> Vec<f64> {
    let mut start = BTreeMap::new();
    let mut out = Vec::new();
    for e in trace.iter() {
        match e.kind {
            TraceKind::RoutineStart { routine } => {
                start.insert(routine, e.time);
            }
            TraceKind::Commit { routine } => {
                if let Some(s) = start.get(&routine) {
                    let ideal = w.routine(routine).ideal_runtime().max(1) as f64;
                    out.push((e.time - s) as f64 / ideal);
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::engine::run;
    use crate::model::{Command, Device, DeviceState, Routine, DEFAULT_SHORT_BOUND_MS};
    use crate::scheduler::SchedulerKind;
    use crate::workload::{breakfast_workload, Injection, BREAKFAST_UNIT_MS};

    fn unit_routines(plan: &[&[u32]]) -> Workload {
        let n_dev = plan.iter().flat_map(|p| p.iter()).max().map_or(0, |m| m + 1);
        Workload {
            devices: (0..n_dev)
                .map(|i| Device { id: DeviceId(i), name: format!("d{i}"), initial: DeviceState::off() })
                .collect(),
            routines: plan
                .iter()
                .enumerate()
                .map(|(i, devs)| Routine {
                    id: RoutineId(i as u32),
                    name: format!("r{i}"),
                    submit_time_ms: 0,
                    commands: devs
                        .iter()
                        .map(|d| Command::new(DeviceId(*d), DeviceState::on(), 1000, DEFAULT_SHORT_BOUND_MS))
                        .collect(),
                })
                .collect(),
            faults: vec![],
            injection: Injection::Timed,
        }
    }

    fn ids(v: &[u32]) -> Vec<RoutineId> {
        v.iter().map(|x| RoutineId(*x)).collect()
    }

    #[test]
    fn lone_routine_latency_is_its_duration() {
        let w = unit_routines(&[&[0, 1, 2]]);
        let res = run(VisibilityModel::Gsv, &w, &EngineConfig::default()).unwrap();
        assert_eq!(latencies(&res.trace)[&RoutineId(0)], 3000);
        assert_eq!(stretch_factors(&w, &res.trace), vec![1.0]);
        assert_eq!(parallelism_level(&res.trace), 1.0);
        assert_eq!(temporary_incongruence(&res.trace), 0.0);
    }

    #[test]
    fn gsv_conflicting_pair_latencies() {
        let w = unit_routines(&[&[0], &[0]]);
        let res = run(VisibilityModel::Gsv, &w, &EngineConfig::default()).unwrap();
        let lat: Vec<SimTime> = latencies(&res.trace).into_values().collect();
        assert_eq!(lat, vec![1000, 2000]);
    }

    #[test]
    fn breakfast_metrics() {
        let w = breakfast_workload();
        let cfg = EngineConfig::default();
        let gsv = run(VisibilityModel::Gsv, &w, &cfg).unwrap();
        assert_eq!(latencies(&gsv.trace).values().max(), Some(&(8 * BREAKFAST_UNIT_MS)));
        assert_eq!(temporary_incongruence(&gsv.trace), 0.0);
        assert!(parallelism_level(&gsv.trace) <= 1.0);
        let psv = run(VisibilityModel::Psv, &w, &cfg).unwrap();
        assert_eq!(temporary_incongruence(&psv.trace), 0.0);
        let ev = run(VisibilityModel::Ev(SchedulerKind::Timeline), &w, &cfg).unwrap();
        assert!(temporary_incongruence(&ev.trace) > 0.0);
        assert!(parallelism_level(&ev.trace) > 1.0);
        let rep = report(&w, &ev, true);
        assert_eq!(rep.final_incongruent, Some(false));
        assert!(rep.latency_p50_ms <= rep.latency_p90_ms && rep.latency_p90_ms <= rep.latency_p95_ms);
    }

    #[test]
    fn mismatch_extremes() {
        assert_eq!(order_mismatch(&ids(&[0, 1, 2, 3]), &ids(&[0, 1, 2, 3])), 0.0);
        assert_eq!(order_mismatch(&ids(&[3, 2, 1, 0]), &ids(&[0, 1, 2, 3])), 100.0);
        // Aborted routines are simply absent from the final order.
        assert_eq!(order_mismatch(&ids(&[2, 0]), &ids(&[0, 1, 2])), 100.0);
    }

    #[test]
    fn rollback_fraction() {
        let mut t = Trace::default();
        assert_eq!(rollback_overhead(&t), 0.0);
        t.push(5, TraceKind::Abort { routine: RoutineId(0), executed: 1, total: 4 });
        assert_eq!(rollback_overhead(&t), 0.25);
    }

    #[test]
    fn paused_routine_stretch() {
        let w = unit_routines(&[&[0, 1]]);
        let mut t = Trace::default();
        t.push(0, TraceKind::RoutineStart { routine: RoutineId(0) });
        t.push(3000, TraceKind::Commit { routine: RoutineId(0) });
        assert_eq!(stretch_factors(&w, &t), vec![1.5]);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&xs, 50.0), 3.0);
        assert_eq!(percentile(&xs, 95.0), 5.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }
}
