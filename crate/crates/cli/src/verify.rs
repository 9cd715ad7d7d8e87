//! Checks a recorded trace against a fresh execution of its workload.

use std::collections::BTreeMap;

use serihome_core::config::EngineConfig;
use serihome_core::engine::{run_with, RunOptions, VisibilityModel};
use serihome_core::model::{DeviceId, RoutineId};
use serihome_core::oracle::{order_consistent, run_incongruent};
use serihome_core::trace::{Trace, TraceKind};
use serihome_core::workload::Workload;

/// Every problem found; empty means the trace verified.
pub fn verify(w: &Workload, model: VisibilityModel, cfg: &EngineConfig, recorded: &Trace) -> anyhow::Result<Vec<String>> {
    let mut problems = trace_sanity(w, model, recorded);

    let res = run_with(model, w, cfg, RunOptions { check_invariants: true })?;
    problems.extend(res.violations.iter().map(|v| format!("invariant: {v}")));
    if let Some(i) = first_divergence(&res.trace, recorded) {
        problems.push(format!("trace diverges from re-execution at event {i}"));
    }
    if model != VisibilityModel::Wv {
        if !order_consistent(w, &res) {
            problems.push("serialization order does not replay to the end state".into());
        }
        if run_incongruent(w, &res) == Some(true) {
            problems.push("end state matches no serial order of the committed routines".into());
        }
    }
    Ok(problems)
}

fn first_divergence(a: &Trace, b: &Trace) -> Option<usize> {
    let n = a.len().max(b.len());
    (0..n).find(|&i| a.events.get(i) != b.events.get(i))
}

/// Structural checks that need only the trace.
pub fn trace_sanity(w: &Workload, model: VisibilityModel, t: &Trace) -> Vec<String> {
    let mut out = Vec::new();
    for pair in t.events.windows(2) {
        if pair[1].time < pair[0].time {
            out.push(format!("time goes backwards at t={}", pair[1].time));
            break;
        }
    }

    let mut finished: BTreeMap<RoutineId, usize> = BTreeMap::new();
    // Device -> routine whose command is in flight there.
    let mut busy: BTreeMap<DeviceId, RoutineId> = BTreeMap::new();
    for e in t.iter() {
        match &e.kind {
            TraceKind::Commit { routine } | TraceKind::Abort { routine, .. } => {
                *finished.entry(*routine).or_default() += 1;
                busy.retain(|_, r| r != routine);
            }
            TraceKind::CmdStart { routine, device, .. } => {
                if let Some(other) = busy.insert(*device, *routine) {
                    if model != VisibilityModel::Wv && other != *routine {
                        out.push(format!("{routine} and {other} overlap on {device} at t={}", e.time));
                    }
                }
            }
            TraceKind::CmdEnd { routine, device, .. }
                if busy.get(device) == Some(routine) => {
                    busy.remove(device);
                }
            _ => {}
        }
    }
    for r in &w.routines {
        match finished.get(&r.id).copied().unwrap_or(0) {
            1 => {}
            0 => out.push(format!("{} never finished", r.id)),
            n => out.push(format!("{} finished {n} times", r.id)),
        }
    }
    out
}
