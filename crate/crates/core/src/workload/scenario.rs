use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Injection, Workload};
use crate::error::{Error, Result};
use crate::model::{parse_routine_value, Device, DeviceId, DeviceState, Inventory, Routine, RoutineId, RoutineTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationMode {
    /// Every template fires exactly once per run.
    FixedOnce,
    /// `total` routines drawn from the templates by weight.
    Probabilistic { total: usize },
}

#[derive(Debug, Clone, Deserialize)]
struct DeviceDoc {
    name: String,
    #[serde(default)]
    initial: DeviceState,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateDoc {
    name: String,
    #[serde(default)]
    user: Option<String>,
    #[serde(default)]
    at_ms: Option<u64>,
    #[serde(default = "one")]
    weight: f64,
    commands: serde_json::Value,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
struct ScenarioDoc {
    name: String,
    #[serde(default)]
    #[allow(dead_code)]
    note: String,
    span_ms: u64,
    mode: GenerationMode,
    #[serde(default = "default_short_bound")]
    short_bound_ms: u64,
    devices: Vec<DeviceDoc>,
    templates: Vec<TemplateDoc>,
    #[serde(default)]
    constraints: Vec<(String, String)>,
}

fn default_short_bound() -> u64 {
    crate::model::DEFAULT_SHORT_BOUND_MS
}

#[derive(Debug, Clone)]
pub struct ScenarioTemplate {
    pub routine: RoutineTemplate,
    pub user: Option<String>,
    /// Fixed trigger time; otherwise drawn at random.
    pub at_ms: Option<u64>,
    pub weight: f64,
}

/// Routine templates with trigger constraints, instantiated per seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub span_ms: u64,
    pub mode: GenerationMode,
    pub devices: Vec<Device>,
    pub templates: Vec<ScenarioTemplate>,
    /// (a, b): every trigger of template a precedes every trigger of b.
    pub constraints: Vec<(usize, usize)>,
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    let devices: Vec<Device> = doc
        .devices
        .into_iter()
        .enumerate()
        .map(|(i, d)| Device { id: DeviceId(i as u32), name: d.name, initial: d.initial })
        .collect();
    let inventory = Inventory::new(&devices);
    let mut templates = Vec::with_capacity(doc.templates.len());
    let mut index = BTreeMap::new();
    for (i, t) in doc.templates.into_iter().enumerate() {
        if index.insert(t.name.clone(), i).is_some() {
            return Err(Error::Malformed(format!("duplicate template {}", t.name)));
        }
        let value = serde_json::json!({ "name": t.name, "commands": t.commands });
        templates.push(ScenarioTemplate {
            routine: parse_routine_value(value, &inventory, doc.short_bound_ms)?,
            user: t.user,
            at_ms: t.at_ms,
            weight: t.weight,
        });
    }
    let mut constraints = Vec::new();
    for (a, b) in doc.constraints {
        let ia = *index.get(&a).ok_or_else(|| Error::Malformed(format!("unknown template {a}")))?;
        let ib = *index.get(&b).ok_or_else(|| Error::Malformed(format!("unknown template {b}")))?;
        if templates[ia].at_ms.is_some() || templates[ib].at_ms.is_some() {
            return Err(Error::Malformed(format!("constraint {a} < {b} involves a fixed-time template")));
        }
        constraints.push((ia, ib));
    }
    let scenario = Scenario { name: doc.name, span_ms: doc.span_ms, mode: doc.mode, devices, templates, constraints };
    scenario.check_acyclic()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path, seed: u64) -> Result<Workload> {
    parse_scenario(&std::fs::read_to_string(path)?)?.instantiate(seed)
}

impl Scenario {
    fn check_acyclic(&self) -> Result<()> {
        let n = self.templates.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.constraints {
            indeg[b] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(x) = ready.pop() {
            seen += 1;
            for &(a, b) in &self.constraints {
                if a == x {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        if seen == n {
            Ok(())
        } else {
            Err(Error::CyclicConstraints(self.name.clone()))
        }
    }

    /// Draws trigger times that respect every constraint: sorted uniform
    /// times are handed out along a random linear extension.
    pub fn instantiate(&self, seed: u64) -> Result<Workload> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = match self.mode {
            GenerationMode::FixedOnce => (0..self.templates.len()).collect(),
            GenerationMode::Probabilistic { total } => {
                let all: Vec<usize> = (0..self.templates.len()).collect();
                let mut v: Vec<usize> = (0..total)
                    .map(|_| *all.choose_weighted(&mut rng, |&i| self.templates[i].weight).expect("weights"))
                    .collect();
                v.sort_unstable();
                v
            }
        };
        let (fixed, free): (Vec<usize>, Vec<usize>) =
            picks.into_iter().partition(|&t| self.templates[t].at_ms.is_some());

        // Random linear extension over the free instances.
        let m = free.len();
        let mut indeg = vec![0usize; m];
        let before = |x: usize, y: usize| self.constraints.contains(&(free[x], free[y]));
        for y in 0..m {
            indeg[y] = (0..m).filter(|&x| before(x, y)).count();
        }
        let mut ready: Vec<usize> = (0..m).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(m);
        while !ready.is_empty() {
            let x = ready.swap_remove(rng.random_range(0..ready.len()));
            order.push(x);
            for y in 0..m {
                if before(x, y) {
                    indeg[y] -= 1;
                    if indeg[y] == 0 {
                        ready.push(y);
                    }
                }
            }
        }
        if order.len() != m {
            return Err(Error::CyclicConstraints(self.name.clone()));
        }
        let mut times: Vec<u64> = (0..m).map(|_| rng.random_range(0..self.span_ms.max(1))).collect();
        times.sort_unstable();
        for i in 1..m {
            times[i] = times[i].max(times[i - 1] + 1);
        }

        let mut drafts: Vec<(u64, usize)> = order.iter().zip(&times).map(|(&x, &t)| (t, free[x])).collect();
        drafts.extend(fixed.iter().map(|&t| (self.templates[t].at_ms.expect("fixed"), t)));
        drafts.sort();
        let routines: Vec<Routine> = drafts
            .into_iter()
            .enumerate()
            .map(|(i, (t, tpl))| self.templates[tpl].routine.instantiate(RoutineId(i as u32), t))
            .collect();
        let w = Workload { devices: self.devices.clone(), routines, faults: Vec::new(), injection: Injection::Timed };
        w.validate()?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"{
        "name": "tiny", "span_ms": 60000, "mode": {"kind": "fixed_once"},
        "devices": [{"name": "lamp"}, {"name": "kettle"}],
        "templates": [
            {"name": "wake", "commands": [{"device": "lamp", "target": "ON", "duration_ms": 100}]},
            {"name": "tea", "commands": [{"device": "kettle", "target": "ON", "duration_ms": 1000}]},
            {"name": "leave", "commands": [{"device": "lamp", "target": "OFF", "duration_ms": 100}]}
        ],
        "constraints": [["wake", "tea"], ["tea", "leave"]]
    }"#;

    #[test]
    fn constraints_respected_for_every_seed() {
        let s = parse_scenario(TINY).unwrap();
        for seed in 0..200 {
            let w = s.instantiate(seed).unwrap();
            let t = |name: &str| w.routines.iter().find(|r| r.name == name).unwrap().submit_time_ms;
            assert!(t("wake") < t("tea") && t("tea") < t("leave"), "seed {seed}");
            assert!(w.routines.iter().all(|r| r.submit_time_ms < 60_000));
        }
    }

    #[test]
    fn cyclic_constraints_rejected() {
        let text = TINY.replace(r#"["tea", "leave"]"#, r#"["tea", "wake"]"#);
        assert!(matches!(parse_scenario(&text), Err(Error::CyclicConstraints(_))));
    }

    #[test]
    fn malformed_rejected() {
        assert!(matches!(parse_scenario("{"), Err(Error::Malformed(_))));
        let text = TINY.replace(r#""device": "kettle""#, r#""device": "toaster""#);
        assert!(matches!(parse_scenario(&text), Err(Error::UnknownDevice(_))));
    }

    #[test]
    fn probabilistic_mode_draws_total() {
        let text = TINY.replace(r#"{"kind": "fixed_once"}"#, r#"{"kind": "probabilistic", "total": 9}"#);
        let text = text.replace(r#""constraints": [["wake", "tea"], ["tea", "leave"]]"#, r#""constraints": []"#);
        let w = parse_scenario(&text).unwrap().instantiate(3).unwrap();
        assert_eq!(w.routines.len(), 9);
    }
}
