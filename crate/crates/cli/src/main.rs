mod args;
mod verify;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::json;
use serihome_core::batch::{run_batch, BatchSpec};
use serihome_core::config::EngineConfig;
use serihome_core::engine::{run_with, RunOptions, RunResult, VisibilityModel};
use serihome_core::metrics::report;
use serihome_core::trace::Trace;
use serihome_core::workload::Workload;

use crate::args::{resolve_model, BenchArgs, Cli, Command, OutputArgs, ReplayArgs, RunArgs, VerifyArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let model = a.model.resolve()?;
    let w = a.source.generate(a.seed)?;
    if let Some(p) = &a.workload_out {
        w.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    execute(&w, model, &a.engine.config(), Some(a.seed), &a.output)
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode> {
    let model = a.model.resolve()?;
    let w = load_workload(&a.workload)?;
    execute(&w, model, &a.engine.config(), None, &a.output)
}

fn execute(w: &Workload, model: VisibilityModel, cfg: &EngineConfig, seed: Option<u64>, out: &OutputArgs) -> Result<ExitCode> {
    let res = run_with(model, w, cfg, RunOptions { check_invariants: out.check })?;
    if let Some(p) = &out.trace_out {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        res.trace.write_jsonl(std::io::BufWriter::new(f))?;
    }
    let doc = run_report(w, &res, seed);
    emit(out.out.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    for v in &res.violations {
        eprintln!("violation: {v}");
    }
    Ok(if res.violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_report(w: &Workload, res: &RunResult, seed: Option<u64>) -> serde_json::Value {
    let oracle = res.committed().count() <= serihome_core::oracle::ORACLE_MAX_ROUTINES;
    json!({
        "model": res.model,
        "seed": seed,
        "metrics": report(w, res, oracle),
        "final_states": res.final_states,
        "order": res.order,
        "outcomes": res.outcomes,
        "violations": res.violations,
    })
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode> {
    let source = a.source.source()?;
    let mut csv = String::new();
    for name in &a.models {
        let spec = BatchSpec {
            model: resolve_model(name, a.scheduler)?,
            config: a.engine.config(),
            source: source.clone(),
            trials: a.trials,
            base_seed: a.seed,
            oracle: a.oracle,
            threads: a.threads,
            fault_timing: a.fault_timing,
        };
        let rep = run_batch(&spec)?;
        let body = rep.to_csv()?;
        if csv.is_empty() {
            csv = body;
        } else {
            csv.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
        }
        for key in ["latency_mean_ms", "latency_norm_mean", "abort_rate", "parallelism_level"] {
            if let Some(s) = rep.stat(key) {
                eprintln!("{:<13} {key:<18} mean {:>12.4}  p50 {:>12.4}  p95 {:>12.4}", spec.model, s.mean, s.p50, s.p95);
            }
        }
    }
    emit(a.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let model = a.model.resolve()?;
    let w = load_workload(&a.workload)?;
    let f = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(f))?;
    let problems = verify::verify(&w, model, &a.engine.config(), &trace)?;
    if problems.is_empty() {
        println!("ok: {} events, {} routines, model {model}", trace.len(), w.routines.len());
        return Ok(ExitCode::SUCCESS);
    }
    for p in &problems {
        println!("violation: {p}");
    }
    Ok(ExitCode::FAILURE)
}

fn load_workload(p: &Path) -> Result<Workload> {
    Workload::load(p).with_context(|| format!("loading workload {}", p.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().lock().write_all(text.as_bytes())?),
    }
}
