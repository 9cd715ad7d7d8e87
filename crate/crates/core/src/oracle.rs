//! Brute-force serializability checks against idealized serial replays.

use std::collections::BTreeMap;

use crate::engine::{OrderItem, RunResult};
use crate::error::{Error, Result};
use crate::model::{DeviceEvent, DeviceId, DeviceState, HealthEvent, RoutineId};
use crate::workload::Workload;

/// Largest committed set the permutation oracle accepts.
pub const ORACLE_MAX_ROUTINES: usize = 9;

/// Replays `order` on an ideal fabric: commands apply instantly, and a device
/// ignores writes between its failure and its restart.
pub fn serial_execute(w: &Workload, order: &[OrderItem]) -> Vec<DeviceState> {
    let mut states = w.initial_states();
    let mut down = vec![false; states.len()];
    for item in order {
        match item {
            OrderItem::Routine { routine } => {
                for c in &w.routine(*routine).commands {
                    let i = c.device.0 as usize;
                    if !down[i] {
                        states[i] = c.target.clone();
                    }
                }
            }
            OrderItem::Event { event } => down[event.device.0 as usize] = event.kind == HealthEvent::Failure,
        }
    }
    states
}

/// Whether the run's serialization order replays to exactly its end state.
pub fn order_consistent(w: &Workload, res: &RunResult) -> bool {
    res.order.as_ref().is_some_and(|o| serial_execute(w, o) == res.final_states)
}

/// True iff `end` matches no serial execution of `committed` in any order,
/// with each device's events placed anywhere consistent with their own
/// sequence.
pub fn final_incongruence_oracle(
    w: &Workload,
    committed: &[RoutineId],
    events: &[DeviceEvent],
    end: &[DeviceState],
) -> Result<bool> {
    if committed.len() > ORACLE_MAX_ROUTINES {
        return Err(Error::OracleTooLarge(committed.len(), ORACLE_MAX_ROUTINES));
    }
    let n_dev = w.devices.len();
    let initial = w.initial_states();
    // Each routine's effect on each device is its last write there.
    let effect: Vec<BTreeMap<DeviceId, &DeviceState>> = committed
        .iter()
        .map(|r| w.routine(*r).commands.iter().map(|c| (c.device, &c.target)).collect())
        .collect();
    let mut chains: Vec<usize> = vec![0; n_dev];
    for e in events {
        chains[e.device.0 as usize] += 1;
    }

    let mut perm: Vec<usize> = (0..committed.len()).collect();
    let mut found = false;
    permute(&mut perm, 0, &mut |p| {
        found = (0..n_dev).all(|d| {
            let writes: Vec<&DeviceState> =
                p.iter().filter_map(|&k| effect[k].get(&DeviceId(d as u32)).copied()).collect();
            device_reachable(&initial[d], &writes, chains[d], &end[d])
        });
        found
    });
    Ok(!found)
}

/// Whether some placement of `events` alternating failures and restarts
/// (starting with a failure) among the writes leaves the device at `target`.
fn device_reachable(initial: &DeviceState, writes: &[&DeviceState], events: usize, target: &DeviceState) -> bool {
    if events == 0 {
        return writes.last().copied().unwrap_or(initial) == target;
    }
    // slots[j] = number of events placed before write j (non-decreasing).
    fn go(
        writes: &[&DeviceState],
        events: usize,
        target: &DeviceState,
        j: usize,
        placed: usize,
        current: &DeviceState,
    ) -> bool {
        if j == writes.len() {
            return current == target;
        }
        (placed..=events).any(|k| {
            let up = k % 2 == 0;
            let next = if up { writes[j] } else { current };
            go(writes, events, target, j + 1, k, next)
        })
    }
    go(writes, events, target, 0, 0, initial)
}

/// Visits every permutation; stops as soon as `visit` returns true.
fn permute(v: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize]) -> bool) -> bool {
    if k == v.len() {
        return visit(v);
    }
    for i in k..v.len() {
        v.swap(k, i);
        if permute(v, k + 1, visit) {
            v.swap(k, i);
            return true;
        }
        v.swap(k, i);
    }
    false
}

/// Device events a run detected, in trace order.
pub fn detected_events(res: &RunResult) -> Vec<DeviceEvent> {
    use crate::trace::TraceKind;
    res.trace
        .iter()
        .filter_map(|e| match e.kind {
            TraceKind::DeviceFail { device } => {
                Some(DeviceEvent { device, kind: HealthEvent::Failure, detect_time: e.time })
            }
            TraceKind::DeviceRestart { device } => {
                Some(DeviceEvent { device, kind: HealthEvent::Restart, detect_time: e.time })
            }
            _ => None,
        })
        .collect()
}

/// Oracle verdict for a finished run; `None` when too many routines committed.
pub fn run_incongruent(w: &Workload, res: &RunResult) -> Option<bool> {
    let committed: Vec<RoutineId> = res.committed().collect();
    final_incongruence_oracle(w, &committed, &detected_events(res), &res.final_states).ok()
}
