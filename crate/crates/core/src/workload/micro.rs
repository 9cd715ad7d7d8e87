use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{devices_named, positive_normal, sim_time, Injection, Workload};
use crate::error::{Error, Result};
use crate::fabric::Fault;
use crate::model::{Command, DeviceId, DeviceState, Necessity, Routine, RoutineId, DEFAULT_SHORT_BOUND_MS};

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrobenchParams {
    /// Number of routines.
    pub routines: usize,
    /// Routines kept in flight.
    pub rho: usize,
    /// Mean commands per routine.
    pub commands: f64,
    /// Zipf exponent of device popularity.
    pub alpha: f64,
    pub long_pct: f64,
    pub long_mean_ms: f64,
    pub short_mean_ms: f64,
    pub must_pct: f64,
    pub fail_pct: f64,
    pub devices: usize,
}

impl Default for MicrobenchParams {
    fn default() -> Self {
        MicrobenchParams {
            routines: 100,
            rho: 4,
            commands: 3.0,
            alpha: 0.05,
            long_pct: 0.10,
            long_mean_ms: 20.0 * 60_000.0,
            short_mean_ms: 10_000.0,
            must_pct: 1.0,
            fail_pct: 0.0,
            devices: 25,
        }
    }
}

impl MicrobenchParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name}={v} outside [0, 1]")))
            }
        };
        frac("long_pct", self.long_pct)?;
        frac("must_pct", self.must_pct)?;
        frac("fail_pct", self.fail_pct)?;
        if self.devices == 0 || self.rho == 0 {
            return Err(Error::InvalidParam("devices and rho must be at least 1".into()));
        }
        if !(self.commands > 0.0 && self.long_mean_ms > 0.0 && self.short_mean_ms > 0.0) {
            return Err(Error::InvalidParam("means must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParam("alpha must be non-negative".into()));
        }
        Ok(())
    }

    /// Rough run length, used to place injected failures.
    pub fn horizon_ms(&self) -> f64 {
        let per_routine = self.commands * self.short_mean_ms + self.long_pct * self.long_mean_ms;
        (self.routines as f64 * per_routine / self.rho as f64).max(per_routine)
    }
}

/// Device popularity by rank: P(rank k) ∝ 1/k^alpha, devices 0..n in rank order.
#[derive(Debug, Clone)]
pub struct Zipf {
    inner: rand_distr::Zipf<f64>,
    n: usize,
}

impl Zipf {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        let inner = rand_distr::Zipf::new(n as f64, alpha).map_err(|e| Error::InvalidParam(format!("zipf: {e}")))?;
        Ok(Zipf { inner, n })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        (self.inner.sample(rng) as usize).clamp(1, self.n) - 1
    }

    /// `count` distinct indices, drawn by rejection.
    pub fn sample_distinct(&self, rng: &mut impl Rng, count: usize) -> Vec<usize> {
        let count = count.min(self.n);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count {
            let x = self.sample(rng);
            attempts += 1;
            if !out.contains(&x) {
                out.push(x);
            } else if attempts > 64 * self.n {
                // Heavy skew: fill with the most popular unused devices.
                let rest: Vec<usize> = (0..self.n).filter(|i| !out.contains(i)).take(count - out.len()).collect();
                out.extend(rest);
            }
        }
        out
    }
}

pub fn generate_microbenchmark(p: &MicrobenchParams, seed: u64) -> Result<Workload> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..p.devices).map(|i| format!("dev{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let devices = devices_named(&refs);
    let zipf = Zipf::new(p.devices, p.alpha)?;

    let mut routines = Vec::with_capacity(p.routines);
    for i in 0..p.routines {
        let n = (positive_normal(&mut rng, p.commands, p.commands / 3.0, 1.0).round() as usize).clamp(1, p.devices);
        let devs = zipf.sample_distinct(&mut rng, n);
        let long_at = rng.random_bool(p.long_pct).then(|| rng.random_range(0..n));
        let commands = devs
            .into_iter()
            .enumerate()
            .map(|(j, d)| {
                let mean = if long_at == Some(j) { p.long_mean_ms } else { p.short_mean_ms };
                let ms = sim_time(positive_normal(&mut rng, mean, 0.1 * mean, 1.0));
                let target = DeviceState::Level(rng.random_range(0..100));
                let mut c = Command::new(DeviceId(d as u32), target, ms, DEFAULT_SHORT_BOUND_MS);
                if !rng.random_bool(p.must_pct) {
                    c.necessity = Necessity::BestEffort;
                }
                c
            })
            .collect();
        routines.push(Routine { id: RoutineId(i as u32), name: format!("r{i}"), submit_time_ms: 0, commands });
    }

    let fail_count = (p.fail_pct * p.devices as f64).round() as usize;
    let mut faults: Vec<Fault> = rand::seq::index::sample(&mut rng, p.devices, fail_count)
        .into_iter()
        .map(|d| Fault {
            device: DeviceId(d as u32),
            fail_at_ms: rng.random_range(0..p.horizon_ms().max(1.0) as u64),
            restart_at_ms: None,
        })
        .collect();
    faults.sort_by_key(|f| (f.device, f.fail_at_ms));

    let w = Workload { devices, routines, faults, injection: Injection::ClosedLoop { concurrency: p.rho } };
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_100_routines_about_10_long() {
        let w = generate_microbenchmark(&MicrobenchParams::default(), 1).unwrap();
        assert_eq!(w.routines.len(), 100);
        assert_eq!(w.devices.len(), 25);
        let long = w.routines.iter().filter(|r| r.commands.iter().any(|c| c.kind == crate::model::CommandKind::Long)).count();
        assert!((3..=20).contains(&long), "{long} long routines");
        let mean = w.routines.iter().map(|r| r.commands.len()).sum::<usize>() as f64 / 100.0;
        assert!((2.5..=3.5).contains(&mean), "mean commands {mean}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let p = MicrobenchParams { fail_pct: 0.25, ..Default::default() };
        let a = generate_microbenchmark(&p, 99).unwrap().to_json();
        let b = generate_microbenchmark(&p, 99).unwrap().to_json();
        assert_eq!(a, b);
        assert_ne!(a, generate_microbenchmark(&p, 100).unwrap().to_json());
    }

    #[test]
    fn failures_hit_a_quarter_of_devices() {
        let p = MicrobenchParams { fail_pct: 0.25, devices: 24, ..Default::default() };
        let w = generate_microbenchmark(&p, 3).unwrap();
        assert_eq!(w.faults.len(), 6);
        assert!(w.faults.iter().all(|f| f.restart_at_ms.is_none()));
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let z = Zipf::new(5, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[z.sample(&mut rng)] += 1;
        }
        for c in counts {
            assert!((9_300..=10_700).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn zipf_rank_frequency_slope_matches_alpha() {
        let alpha = 1.2;
        let z = Zipf::new(20, alpha).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0f64; 20];
        for _ in 0..200_000 {
            counts[z.sample(&mut rng)] += 1.0;
        }
        // Least-squares slope of log(freq) against log(rank) over the top ranks.
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (((k + 1) as f64).ln(), counts[k].ln())).collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + alpha).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn distinct_devices_within_routine() {
        let z = Zipf::new(4, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = z.sample_distinct(&mut rng, 4);
        d.sort();
        assert_eq!(d, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bad_params_rejected() {
        let p = MicrobenchParams { long_pct: 1.5, ..Default::default() };
        assert!(generate_microbenchmark(&p, 0).is_err());
    }
}
