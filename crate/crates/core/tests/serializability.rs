//! Random small workloads, with and without failures: every EV and PSV run
//! must replay exactly from its emitted order, match some serial execution,
//! and keep the lineage table consistent after every event.

mod common;

use common::{check_serializable, instance, SERIAL_MODELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serihome_core::fabric::Fault;

fn check(w: &serihome_core::workload::Workload, label: &str) {
    for m in SERIAL_MODELS {
        if let Err(e) = check_serializable(w, m) {
            panic!("{label} {e}");
        }
    }
}

#[test]
fn five_hundred_random_instances() {
    for seed in 0..500u64 {
        let w = instance(seed);
        check(&w, &format!("seed {seed}"));
    }
}

#[test]
fn restarts_keep_runs_serializable() {
    for seed in 0..200u64 {
        let mut w = instance(seed * 2 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in &mut w.faults {
            if rng.random_bool(0.7) {
                let f: &mut Fault = f;
                f.restart_at_ms = Some(f.fail_at_ms + rng.random_range(500..60_000));
            }
        }
        check(&w, &format!("restart seed {seed}"));
    }
}
