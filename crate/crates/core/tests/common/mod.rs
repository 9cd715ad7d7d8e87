//! Helpers shared by integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serihome_core::config::EngineConfig;
use serihome_core::engine::{decide, run_with, OrderItem, Outcome, RunOptions, TimingCase, VisibilityModel};
use serihome_core::oracle::{order_consistent, run_incongruent, serial_execute};
use serihome_core::fabric::Fault;
use serihome_core::model::{
    Command, Device, DeviceId, DeviceState, HealthEvent, Routine, RoutineId, DEFAULT_SHORT_BOUND_MS,
};
use serihome_core::scheduler::SchedulerKind;
use serihome_core::workload::{generate_microbenchmark, Injection, MicrobenchParams, Workload};

pub const MATRIX_MODELS: [VisibilityModel; 5] = [
    VisibilityModel::Wv,
    VisibilityModel::Gsv,
    VisibilityModel::Sgsv,
    VisibilityModel::Psv,
    VisibilityModel::Ev(SchedulerKind::Timeline),
];

/// One routine over d1, d0, d1 (10 s each); d0 is touched in [10 s, 20 s] and
/// the routine finishes at 30 s. d2 is never touched.
pub fn matrix_workload(case: TimingCase) -> Workload {
    let fault = |device, fail_at_ms, restart_at_ms| Fault { device: DeviceId(device), fail_at_ms, restart_at_ms };
    let fault = match case {
        TimingCase::Untouched => fault(2, 5_000, Some(25_000)),
        TimingCase::BeforeFirstTouchRecovered => fault(0, 2_000, Some(6_000)),
        TimingCase::AfterLastTouchRecovered => fault(0, 22_000, Some(26_000)),
        TimingCase::AfterLastTouchStillDown => fault(0, 22_000, None),
        TimingCase::DuringTouches => fault(0, 15_000, Some(40_000)),
        TimingCase::BeforeFirstTouchStillDown => fault(0, 2_000, Some(15_000)),
    };
    let cmd = |d| Command::new(DeviceId(d), DeviceState::on(), 10_000, DEFAULT_SHORT_BOUND_MS);
    Workload {
        devices: (0..3)
            .map(|i| Device { id: DeviceId(i), name: format!("d{i}"), initial: DeviceState::off() })
            .collect(),
        routines: vec![Routine {
            id: RoutineId(0),
            name: "r".into(),
            submit_time_ms: 0,
            commands: vec![cmd(1), cmd(0), cmd(1)],
        }],
        faults: vec![fault],
        injection: Injection::Timed,
    }
}

/// What the engine actually did: `X` on abort; otherwise a check mark with the
/// position of the failure in the emitted order (`F<R`, `R<F`), or `none`
/// when the model records no order.
pub fn observed_cell(model: VisibilityModel, case: TimingCase) -> String {
    let w = matrix_workload(case);
    let res = run_with(model, &w, &EngineConfig::default(), RunOptions { check_invariants: true }).unwrap();
    assert!(res.violations.is_empty(), "{model} {case:?}: {:?}", res.violations);
    if res.outcomes[0] == Outcome::Aborted {
        return "X".into();
    }
    assert_eq!(res.outcomes[0], Outcome::Committed);
    let Some(order) = res.order else { return "ok none".into() };
    let pos = |pred: &dyn Fn(&OrderItem) -> bool| order.iter().position(pred).unwrap();
    let r = pos(&|i| matches!(i, OrderItem::Routine { .. }));
    let f = pos(&|i| matches!(i, OrderItem::Event { event } if event.kind == HealthEvent::Failure));
    if case == TimingCase::Untouched {
        "ok any".into()
    } else if f < r {
        "ok F<R".into()
    } else {
        "ok R<F".into()
    }
}

/// The same cell as predicted by the decision table.
pub fn expected_cell(model: VisibilityModel, case: TimingCase) -> String {
    match decide(model, case) {
        None => "ok none".into(),
        Some(d) if d.symbol() == "X" => "X".into(),
        Some(d) if d.symbol() == "ok" => "ok any".into(),
        Some(d) => format!("ok {}", d.symbol()),
    }
}

pub fn render_matrix(cell: impl Fn(VisibilityModel, TimingCase) -> String) -> String {
    let mut out = String::from("case");
    for m in MATRIX_MODELS {
        out.push_str(&format!("\t{m}"));
    }
    out.push('\n');
    for case in TimingCase::ALL {
        out.push_str(&format!("{case:?}"));
        for m in MATRIX_MODELS {
            out.push_str(&format!("\t{}", cell(m, case)));
        }
        out.push('\n');
    }
    out
}

pub fn golden_matrix() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/failure_matrix.tsv")).unwrap()
}

pub const SERIAL_MODELS: [VisibilityModel; 4] = [
    VisibilityModel::Psv,
    VisibilityModel::Ev(SchedulerKind::Fcfs),
    VisibilityModel::Ev(SchedulerKind::Jit),
    VisibilityModel::Ev(SchedulerKind::Timeline),
];

pub fn instance(seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = MicrobenchParams {
        routines: rng.random_range(2..=7),
        devices: rng.random_range(2..=6),
        rho: rng.random_range(1..=4),
        commands: 3.0,
        alpha: rng.random_range(0.0..1.5),
        long_pct: 0.3,
        long_mean_ms: 120_000.0,
        short_mean_ms: 10_000.0,
        must_pct: if seed.is_multiple_of(3) { 0.7 } else { 1.0 },
        fail_pct: if seed.is_multiple_of(2) { 0.0 } else { 0.25 },
    };
    generate_microbenchmark(&p, seed).unwrap()
}

/// Runs `model` on `w` with invariant checking and verifies the result
/// against the serial oracle.
pub fn check_serializable(w: &Workload, model: VisibilityModel) -> Result<(), String> {
    let res = run_with(model, w, &EngineConfig::default(), RunOptions { check_invariants: true })
        .map_err(|e| format!("{model}: {e}"))?;
    if !res.violations.is_empty() {
        return Err(format!("{model}: {:?}", res.violations));
    }
    if res.outcomes.contains(&Outcome::Unfinished) {
        return Err(format!("{model}: stalled"));
    }
    let order = res.order.as_ref().ok_or(format!("{model}: no order"))?;
    if !order_consistent(w, &res) {
        return Err(format!(
            "{model}: replay {:?} != end {:?}, order {order:?}",
            serial_execute(w, order),
            res.final_states
        ));
    }
    match run_incongruent(w, &res) {
        Some(false) => Ok(()),
        v => Err(format!("{model}: oracle says {v:?}")),
    }
}
