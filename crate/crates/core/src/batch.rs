//! Many seeded trials of one configuration, run on a worker pool and merged
//! by trial index.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::engine::{run, VisibilityModel};
use crate::error::{Error, Result};
use crate::metrics::{mean, percentile, report, MetricsReport};
use crate::workload::{generate_factory, generate_microbenchmark, MicrobenchParams, Scenario, Workload};

/// Where each trial's workload comes from.
#[derive(Debug, Clone)]
pub enum WorkloadSource {
    Micro(MicrobenchParams),
    Scenario(Scenario),
    Factory,
    /// The same workload every trial.
    Fixed(Workload),
}

impl WorkloadSource {
    pub fn generate(&self, seed: u64) -> Result<Workload> {
        match self {
            WorkloadSource::Micro(p) => generate_microbenchmark(p, seed),
            WorkloadSource::Scenario(s) => s.instantiate(seed),
            WorkloadSource::Factory => Ok(generate_factory(seed)),
            WorkloadSource::Fixed(w) => Ok(w.clone()),
        }
    }
}

/// How generated failure times relate to a trial's run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultTiming {
    /// Failure times are used as generated.
    #[default]
    Absolute,
    /// Each failure keeps its relative position but is rescaled onto the
    /// model's own failure-free makespan, so it lands at a random point of
    /// that model's run however long the run is.
    RunRelative,
}

impl std::str::FromStr for FaultTiming {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "absolute" => Ok(FaultTiming::Absolute),
            "run-relative" => Ok(FaultTiming::RunRelative),
            _ => Err(format!("unknown fault timing {s:?} (absolute, run-relative)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub model: VisibilityModel,
    pub config: EngineConfig,
    pub source: WorkloadSource,
    pub trials: usize,
    pub base_seed: u64,
    /// Run the permutation oracle on each trial (small workloads only).
    pub oracle: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub fault_timing: FaultTiming,
}

/// Seed of trial `i`.
pub fn trial_seed(base_seed: u64, i: usize) -> u64 {
    base_seed ^ i as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub model: VisibilityModel,
    pub trials: Vec<MetricsReport>,
    pub seeds: Vec<u64>,
    /// Per-metric statistics across trials.
    pub summary: BTreeMap<String, Stat>,
}

const CSV_HEADER: [&str; 21] = [
    "trial",
    "seed",
    "model",
    "routines",
    "committed",
    "aborted",
    "makespan_ms",
    "latency_mean_ms",
    "latency_p50_ms",
    "latency_p90_ms",
    "latency_p95_ms",
    "latency_norm_mean",
    "temporary_incongruence",
    "final_incongruent",
    "parallelism_level",
    "order_mismatch_pct",
    "abort_rate",
    "rollback_overhead",
    "stretch_mean",
    "stretch_p95",
    "stretch_max",
];

fn csv_record(trial: usize, seed: u64, m: &MetricsReport) -> Vec<String> {
    let f = |x: f64| format!("{x:.6}");
    vec![
        trial.to_string(),
        seed.to_string(),
        m.model.to_string(),
        m.routines.to_string(),
        m.committed.to_string(),
        m.aborted.to_string(),
        m.makespan_ms.to_string(),
        f(m.latency_mean_ms),
        f(m.latency_p50_ms),
        f(m.latency_p90_ms),
        f(m.latency_p95_ms),
        f(m.latency_norm_mean),
        f(m.temporary_incongruence),
        m.final_incongruent.map_or(String::new(), |b| b.to_string()),
        f(m.parallelism_level),
        f(m.order_mismatch_pct),
        f(m.abort_rate),
        f(m.rollback_overhead),
        f(m.stretch_mean),
        f(m.stretch_p95),
        f(m.stretch_max),
    ]
}

/// Numeric columns summarized across trials.
const SUMMARY: [(&str, fn(&MetricsReport) -> f64); 14] = [
    ("makespan_ms", |m| m.makespan_ms as f64),
    ("latency_mean_ms", |m| m.latency_mean_ms),
    ("latency_p50_ms", |m| m.latency_p50_ms),
    ("latency_p90_ms", |m| m.latency_p90_ms),
    ("latency_p95_ms", |m| m.latency_p95_ms),
    ("latency_norm_mean", |m| m.latency_norm_mean),
    ("temporary_incongruence", |m| m.temporary_incongruence),
    ("parallelism_level", |m| m.parallelism_level),
    ("order_mismatch_pct", |m| m.order_mismatch_pct),
    ("abort_rate", |m| m.abort_rate),
    ("rollback_overhead", |m| m.rollback_overhead),
    ("stretch_mean", |m| m.stretch_mean),
    ("stretch_max", |m| m.stretch_max),
    ("final_incongruent", |m| if m.final_incongruent == Some(true) { 1.0 } else { 0.0 }),
];

impl BatchReport {
    pub fn stat(&self, metric: &str) -> Option<Stat> {
        self.summary.get(metric).copied()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for (i, (m, seed)) in self.trials.iter().zip(&self.seeds).enumerate() {
            w.write_record(csv_record(i, *seed, m))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// The workload trial `i` runs, with failure times placed per `fault_timing`.
pub fn trial_workload(spec: &BatchSpec, i: usize) -> Result<Workload> {
    let mut w = spec.source.generate(trial_seed(spec.base_seed, i))?;
    if let (FaultTiming::RunRelative, WorkloadSource::Micro(p)) = (spec.fault_timing, &spec.source) {
        if !w.faults.is_empty() {
            let clean = Workload { faults: Vec::new(), ..w.clone() };
            let makespan = run(spec.model, &clean, &spec.config)?.makespan() as f64;
            let scale = makespan / p.horizon_ms().max(1.0);
            for f in &mut w.faults {
                f.fail_at_ms = (f.fail_at_ms as f64 * scale).round() as u64;
            }
            w.faults.sort_by_key(|f| (f.device, f.fail_at_ms));
        }
    }
    Ok(w)
}

pub fn run_trial(spec: &BatchSpec, i: usize) -> Result<MetricsReport> {
    let w = trial_workload(spec, i)?;
    let res = run(spec.model, &w, &spec.config)?;
    Ok(report(&w, &res, spec.oracle))
}

pub fn run_batch(spec: &BatchSpec) -> Result<BatchReport> {
    if spec.trials == 0 {
        return Err(Error::InvalidParam("trials must be at least 1".into()));
    }
    let work = || (0..spec.trials).into_par_iter().map(|i| run_trial(spec, i)).collect::<Result<Vec<_>>>();
    let trials = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParam(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let summary = SUMMARY
        .iter()
        .map(|(name, f)| {
            let xs: Vec<f64> = trials.iter().map(f).collect();
            (name.to_string(), Stat { mean: mean(&xs), p50: percentile(&xs, 50.0), p95: percentile(&xs, 95.0) })
        })
        .collect();
    Ok(BatchReport {
        model: spec.model,
        seeds: (0..spec.trials).map(|i| trial_seed(spec.base_seed, i)).collect(),
        trials,
        summary,
    })
}
