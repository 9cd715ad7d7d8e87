use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{positive_normal, sim_time, Injection, Workload};
use crate::model::{Command, Device, DeviceId, DeviceState, Routine, RoutineId, DEFAULT_SHORT_BOUND_MS};

pub const FACTORY_STAGES: usize = 50;
pub const FACTORY_GLOBAL_DEVICES: usize = 5;
const LOCAL_PER_STAGE: usize = 3;
const ROUTINES_PER_WORKER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceClass {
    Local,
    Neighbor,
    Global,
}

impl DeviceClass {
    pub fn draw(rng: &mut impl Rng) -> Self {
        let x: f64 = rng.random();
        if x < 0.6 {
            DeviceClass::Local
        } else if x < 0.9 {
            DeviceClass::Neighbor
        } else {
            DeviceClass::Global
        }
    }
}

/// Assembly line: each stage owns a few local devices, adjacent stages share
/// one device, and a handful of devices are shared by everyone.
#[derive(Debug, Clone)]
pub struct FactoryLayout {
    pub devices: Vec<Device>,
    pub local: Vec<Vec<DeviceId>>,
    /// `shared[i]` sits between stage i and i+1.
    pub shared: Vec<DeviceId>,
    pub global: Vec<DeviceId>,
}

impl FactoryLayout {
    pub fn new() -> Self {
        let mut devices = Vec::new();
        let mut add = |name: String| {
            let id = DeviceId(devices.len() as u32);
            devices.push(Device { id, name, initial: DeviceState::off() });
            id
        };
        let local = (0..FACTORY_STAGES)
            .map(|s| (0..LOCAL_PER_STAGE).map(|k| add(format!("stage{s}-tool{k}"))).collect())
            .collect();
        let shared = (0..FACTORY_STAGES - 1).map(|s| add(format!("belt{s}-{}", s + 1))).collect();
        let global = (0..FACTORY_GLOBAL_DEVICES).map(|g| add(format!("global{g}"))).collect();
        FactoryLayout { devices, local, shared, global }
    }

    /// Devices a stage shares with its immediate neighbours.
    pub fn neighbors(&self, stage: usize) -> Vec<DeviceId> {
        let mut out = Vec::new();
        if stage > 0 {
            out.push(self.shared[stage - 1]);
        }
        if stage + 1 < FACTORY_STAGES {
            out.push(self.shared[stage]);
        }
        out
    }

    pub fn pick(&self, stage: usize, class: DeviceClass, rng: &mut impl Rng) -> DeviceId {
        let pool = match class {
            DeviceClass::Local => self.local[stage].clone(),
            DeviceClass::Neighbor => self.neighbors(stage),
            DeviceClass::Global => self.global.clone(),
        };
        pool[rng.random_range(0..pool.len())]
    }
}

impl Default for FactoryLayout {
    fn default() -> Self {
        Self::new()
    }
}

/// Every worker runs routines back to back; each routine's commands draw a
/// device class with probabilities 0.6 / 0.3 / 0.1.
pub fn generate_factory(seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = FactoryLayout::new();
    let mut drafts: Vec<(u64, usize, Routine)> = Vec::new();
    for stage in 0..FACTORY_STAGES {
        let mut t = 0;
        for k in 0..ROUTINES_PER_WORKER {
            let n = (positive_normal(&mut rng, 3.0, 1.0, 1.0).round() as usize).max(1);
            let commands: Vec<Command> = (0..n)
                .map(|_| {
                    let d = layout.pick(stage, DeviceClass::draw(&mut rng), &mut rng);
                    let ms = sim_time(positive_normal(&mut rng, 10_000.0, 1_000.0, 1.0));
                    Command::new(d, DeviceState::Level(rng.random_range(0..100)), ms, DEFAULT_SHORT_BOUND_MS)
                })
                .collect();
            let r = Routine { id: RoutineId(0), name: format!("stage{stage}-job{k}"), submit_time_ms: t, commands };
            t += r.ideal_runtime();
            drafts.push((r.submit_time_ms, stage, r));
        }
    }
    drafts.sort_by_key(|(t, s, _)| (*t, *s));
    let routines = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, mut r))| {
            r.id = RoutineId(i as u32);
            r
        })
        .collect();
    Workload { devices: layout.devices, routines, faults: Vec::new(), injection: Injection::Timed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifty_stages_five_globals() {
        let l = FactoryLayout::new();
        assert_eq!(l.local.len(), 50);
        assert_eq!(l.global.len(), 5);
        let w = generate_factory(1);
        w.validate().unwrap();
        assert_eq!(w.routines.len(), 50 * ROUTINES_PER_WORKER);
        assert!(w.devices.iter().filter(|d| d.name.starts_with("global")).count() == 5);
    }

    #[test]
    fn boundary_stage_has_one_neighbor() {
        let l = FactoryLayout::new();
        assert_eq!(l.neighbors(0), vec![l.shared[0]]);
        assert_eq!(l.neighbors(49), vec![l.shared[48]]);
        assert_eq!(l.neighbors(10).len(), 2);
    }

    #[test]
    fn class_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = [0usize; 3];
        for _ in 0..10_000 {
            c[match DeviceClass::draw(&mut rng) {
                DeviceClass::Local => 0,
                DeviceClass::Neighbor => 1,
                DeviceClass::Global => 2,
            }] += 1;
        }
        let f: Vec<f64> = c.iter().map(|x| *x as f64 / 10_000.0).collect();
        assert!((f[0] - 0.6).abs() <= 0.02 && (f[1] - 0.3).abs() <= 0.02 && (f[2] - 0.1).abs() <= 0.02, "{f:?}");
    }

    #[test]
    fn workers_never_idle() {
        let w = generate_factory(2);
        let mut by_stage: std::collections::BTreeMap<&str, Vec<&Routine>> = Default::default();
        for r in &w.routines {
            by_stage.entry(r.name.split('-').next().unwrap()).or_default().push(r);
        }
        for rs in by_stage.values() {
            for pair in rs.windows(2) {
                assert_eq!(pair[1].submit_time_ms, pair[0].submit_time_ms + pair[0].ideal_runtime());
            }
        }
    }
}
