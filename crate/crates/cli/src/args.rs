use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serihome_core::batch::{FaultTiming, WorkloadSource};
use serihome_core::config::EngineConfig;
use serihome_core::engine::VisibilityModel;
use serihome_core::scheduler::SchedulerKind;
use serihome_core::workload::{load_scenario, parse_scenario, MicrobenchParams, Workload};

#[derive(Debug, Parser)]
#[command(name = "serihome", version, about = "Simulate concurrent smart-home routines under different visibility models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one workload, run it, and emit its trace and report.
    Run(RunArgs),
    /// Run many seeded trials and emit per-trial metrics as CSV.
    Bench(BenchArgs),
    /// Re-execute a workload and check a recorded trace against it.
    Verify(VerifyArgs),
    /// Re-execute a saved workload file.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// wv, gsv, sgsv, psv or ev (optionally ev-fcfs, ev-jit, ev-timeline).
    #[arg(long, default_value = "ev")]
    pub model: String,
    /// Placement policy for EV: fcfs, jit or timeline.
    #[arg(long)]
    pub scheduler: Option<SchedulerKind>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<VisibilityModel> {
        resolve_model(&self.model, self.scheduler)
    }
}

pub fn resolve_model(name: &str, scheduler: Option<SchedulerKind>) -> Result<VisibilityModel> {
    let model: VisibilityModel = name.parse()?;
    match (model, scheduler) {
        (m, None) => Ok(m),
        (VisibilityModel::Ev(_), Some(s)) => Ok(VisibilityModel::Ev(s)),
        (m, Some(_)) => bail!("--scheduler only applies to ev, not {m}"),
    }
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Lock-hold estimate for short commands.
    #[arg(long, default_value_t = 100)]
    pub tau_timeout_ms: u64,
    #[arg(long, default_value_t = 1.1)]
    pub leniency: f64,
    #[arg(long, default_value_t = 2.0)]
    pub stretch_threshold: f64,
    #[arg(long)]
    pub no_pre_lease: bool,
    #[arg(long)]
    pub no_post_lease: bool,
    /// Let EV routines run into devices already known to be down.
    #[arg(long)]
    pub no_fail_fast: bool,
}

impl EngineArgs {
    pub fn config(&self) -> EngineConfig {
        EngineConfig {
            tau_timeout_ms: self.tau_timeout_ms,
            leniency: self.leniency,
            stretch_threshold: self.stretch_threshold,
            pre_lease: !self.no_pre_lease,
            post_lease: !self.no_post_lease,
            fail_fast: !self.no_fail_fast,
            ..EngineConfig::default()
        }
    }
}

/// Synthetic benchmark knobs; names mirror the generator's parameters.
#[derive(Debug, Args)]
pub struct MicroArgs {
    #[arg(long, default_value_t = 100)]
    pub routines: usize,
    /// Routines kept in flight.
    #[arg(long, default_value_t = 4)]
    pub rho: usize,
    /// Mean commands per routine.
    #[arg(long, default_value_t = 3.0)]
    pub commands: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.10)]
    pub long_pct: f64,
    #[arg(long, default_value_t = 1_200_000.0)]
    pub long_mean_ms: f64,
    #[arg(long, default_value_t = 10_000.0)]
    pub short_mean_ms: f64,
    #[arg(long, default_value_t = 1.0)]
    pub must_pct: f64,
    #[arg(long, default_value_t = 0.0)]
    pub fail_pct: f64,
    #[arg(long, default_value_t = 25)]
    pub devices: usize,
}

impl MicroArgs {
    pub fn params(&self) -> MicrobenchParams {
        MicrobenchParams {
            routines: self.routines,
            rho: self.rho,
            commands: self.commands,
            alpha: self.alpha,
            long_pct: self.long_pct,
            long_mean_ms: self.long_mean_ms,
            short_mean_ms: self.short_mean_ms,
            must_pct: self.must_pct,
            fail_pct: self.fail_pct,
            devices: self.devices,
        }
    }
}

/// Where generated workloads come from; the microbenchmark unless a scenario
/// file or the factory layout is named.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Scenario file (JSON) to instantiate instead of the microbenchmark.
    #[arg(long, conflicts_with = "factory")]
    pub scenario: Option<PathBuf>,
    /// Use the factory layout.
    #[arg(long)]
    pub factory: bool,
    #[command(flatten)]
    pub micro: MicroArgs,
}

impl SourceArgs {
    pub fn source(&self) -> Result<WorkloadSource> {
        if let Some(path) = &self.scenario {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(WorkloadSource::Scenario(parse_scenario(&text)?));
        }
        if self.factory {
            return Ok(WorkloadSource::Factory);
        }
        let p = self.micro.params();
        p.validate()?;
        Ok(WorkloadSource::Micro(p))
    }

    pub fn generate(&self, seed: u64) -> Result<Workload> {
        match &self.scenario {
            Some(path) => Ok(load_scenario(path, seed)?),
            None => Ok(self.source()?.generate(seed)?),
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the trace here as JSON lines.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Check lineage-table invariants after every event.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Also save the generated workload, for replay or verify.
    #[arg(long)]
    pub workload_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// May be repeated; each model gets the same seeds.
    #[arg(long = "model", default_value = "ev")]
    pub models: Vec<String>,
    #[arg(long)]
    pub scheduler: Option<SchedulerKind>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Base seed; trial i uses seed ^ i.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// absolute or run-relative.
    #[arg(long, default_value = "absolute")]
    pub fault_timing: FaultTiming,
    /// Run the permutation oracle on every trial.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub workload: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}
