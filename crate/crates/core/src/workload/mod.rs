//! Workloads: devices, submitted routines and injected faults, plus the
//! generators that produce them.

mod factory;
mod micro;
mod scenario;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use self::factory::{generate_factory, DeviceClass, FactoryLayout, FACTORY_GLOBAL_DEVICES, FACTORY_STAGES};
pub use self::micro::{generate_microbenchmark, MicrobenchParams, Zipf};
pub use self::scenario::{load_scenario, parse_scenario, GenerationMode, Scenario, ScenarioTemplate};

use crate::clock::SimTime;
use crate::error::{Error, Result};
use crate::fabric::Fault;
use crate::model::{Command, Device, DeviceId, DeviceState, Routine, RoutineId, DEFAULT_SHORT_BOUND_MS};

/// How routines enter the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Injection {
    /// Each routine arrives at its `submit_time_ms`.
    #[default]
    Timed,
    /// `concurrency` routines start at t=0; each finish injects the next one
    /// in id order. Stored submit times are ignored.
    ClosedLoop { concurrency: usize },
}

impl Injection {
    fn is_timed(&self) -> bool {
        *self == Injection::Timed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub devices: Vec<Device>,
    pub routines: Vec<Routine>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default, skip_serializing_if = "Injection::is_timed")]
    pub injection: Injection,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.devices.iter().enumerate() {
            if d.id.0 as usize != i {
                return Err(Error::Malformed(format!("device ids must be 0..n in order, found {} at {i}", d.id)));
            }
        }
        let n = self.devices.len() as u32;
        let mut last_submit = 0;
        for (i, r) in self.routines.iter().enumerate() {
            if r.id.0 as usize != i {
                return Err(Error::Malformed(format!("routine ids must be 0..n in order, found {} at {i}", r.id)));
            }
            if self.injection.is_timed() {
                if r.submit_time_ms < last_submit {
                    return Err(Error::Malformed(format!("{} submitted before its predecessor", r.id)));
                }
                last_submit = r.submit_time_ms;
            }
            if r.commands.is_empty() {
                return Err(Error::EmptyRoutine(r.name.clone()));
            }
            for (j, c) in r.commands.iter().enumerate() {
                if c.device.0 >= n {
                    return Err(Error::UnknownDevice(c.device.to_string()));
                }
                if c.duration_ms == 0 {
                    return Err(Error::NonPositiveDuration { routine: r.name.clone(), index: j });
                }
            }
        }
        let mut faults = self.faults.clone();
        faults.sort_by_key(|f| (f.device, f.fail_at_ms));
        for w in faults.windows(2) {
            if w[0].device == w[1].device && w[0].restart_at_ms.is_none_or(|r| r > w[1].fail_at_ms) {
                return Err(Error::Malformed(format!("overlapping faults on {}", w[0].device)));
            }
        }
        for f in &faults {
            if f.device.0 >= n {
                return Err(Error::UnknownDevice(f.device.to_string()));
            }
            if f.restart_at_ms.is_some_and(|r| r <= f.fail_at_ms) {
                return Err(Error::Malformed(format!("restart before failure on {}", f.device)));
            }
        }
        if let Injection::ClosedLoop { concurrency } = self.injection {
            if concurrency == 0 {
                return Err(Error::InvalidParam("closed-loop concurrency must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Workload = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn routine(&self, r: RoutineId) -> &Routine {
        &self.routines[r.0 as usize]
    }

    pub fn initial_states(&self) -> Vec<DeviceState> {
        self.devices.iter().map(|d| d.initial.clone()).collect()
    }

    pub fn device_id(&self, name: &str) -> Option<DeviceId> {
        self.devices.iter().find(|d| d.name == name).map(|d| d.id)
    }
}

pub(crate) fn devices_named(names: &[&str]) -> Vec<Device> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| Device { id: DeviceId(i as u32), name: (*n).to_string(), initial: DeviceState::off() })
        .collect()
}

/// Length of one time unit in the breakfast/cleaning example.
pub const BREAKFAST_UNIT_MS: u64 = 300_000;

/// The breakfast/cleaning example: five routines over coffee, pancake,
/// roomba and mop, all unit-length commands, all submitted at once.
pub fn breakfast_workload() -> Workload {
    let devices = devices_named(&["coffee", "pancake", "roomba", "mop"]);
    let plan: [(&str, &[u32]); 5] =
        [("R1", &[0, 1]), ("R2", &[0, 1]), ("R3", &[1]), ("R4", &[2, 3]), ("R5", &[3])];
    let routines = plan
        .iter()
        .enumerate()
        .map(|(i, (name, devs))| Routine {
            id: RoutineId(i as u32),
            name: (*name).to_string(),
            submit_time_ms: 0,
            commands: devs
                .iter()
                .map(|d| Command::new(DeviceId(*d), DeviceState::on(), BREAKFAST_UNIT_MS, DEFAULT_SHORT_BOUND_MS))
                .collect(),
        })
        .collect();
    Workload { devices, routines, faults: Vec::new(), injection: Injection::Timed }
}

/// Two routines over `k` devices: one turns everything on, the other turns
/// everything off `offset_ms` later. Each command's duration comes from its
/// own (seed, routine, device) stream, so adding devices never changes the
/// durations of the first ones.
pub fn overlap_workload(k: usize, offset_ms: u64, seed: u64) -> Workload {
    let names: Vec<String> = (0..k).map(|i| format!("light{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let devices = devices_named(&refs);
    let dur = Normal::new(1000.0f64, 300.0).expect("valid normal");
    let routine = |idx: u32, target: DeviceState, submit: u64| Routine {
        id: RoutineId(idx),
        name: if idx == 0 { "all-on".into() } else { "all-off".into() },
        submit_time_ms: submit,
        commands: (0..k)
            .map(|d| {
                let stream = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((idx as u64) << 32) ^ d as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let ms = dur.sample(&mut rng).round().max(50.0) as u64;
                Command::new(DeviceId(d as u32), target.clone(), ms, DEFAULT_SHORT_BOUND_MS)
            })
            .collect(),
    };
    Workload {
        devices,
        routines: vec![routine(0, DeviceState::on(), 0), routine(1, DeviceState::off(), offset_ms)],
        faults: Vec::new(),
        injection: Injection::Timed,
    }
}

/// Clamped normal sample used by every generator.
pub(crate) fn positive_normal(rng: &mut impl Rng, mean: f64, sd: f64, floor: f64) -> f64 {
    if sd <= 0.0 {
        return mean.max(floor);
    }
    Normal::new(mean, sd).expect("finite parameters").sample(rng).max(floor)
}

pub(crate) fn sim_time(x: f64) -> SimTime {
    x.round().max(1.0) as SimTime
}
