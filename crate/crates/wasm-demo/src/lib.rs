//! Browser demo: runs the simulator in the page and hands results to JS as
//! JSON strings.

use serde::Serialize;
use serihome_core::config::EngineConfig;
use serihome_core::engine::{run, VisibilityModel};
use serihome_core::metrics::{report, MetricsReport};
use serihome_core::model::DeviceState;
use serihome_core::trace::TraceKind;
use serihome_core::workload::{breakfast_workload, generate_microbenchmark, MicrobenchParams, BREAKFAST_UNIT_MS};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Bar {
    pub routine: String,
    pub device: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Serialize)]
pub struct Timeline {
    pub model: String,
    pub makespan_units: f64,
    pub bars: Vec<Bar>,
    pub final_states: Vec<(String, DeviceState)>,
}

/// Per-command bars of the breakfast example, in time units.
pub fn breakfast_timeline(model: &str) -> Result<Timeline, String> {
    let model: VisibilityModel = model.parse().map_err(|e| format!("{e}"))?;
    let w = breakfast_workload();
    let res = run(model, &w, &EngineConfig::default()).map_err(|e| e.to_string())?;
    let unit = BREAKFAST_UNIT_MS as f64;
    let mut open = Vec::new();
    let mut bars = Vec::new();
    for e in res.trace.iter() {
        match &e.kind {
            TraceKind::CmdStart { routine, index, .. } => open.push((*routine, *index, e.time)),
            TraceKind::CmdEnd { routine, index, device, .. } => {
                if let Some(i) = open.iter().position(|(r, k, _)| r == routine && k == index) {
                    let (_, _, start) = open.swap_remove(i);
                    bars.push(Bar {
                        routine: w.routine(*routine).name.clone(),
                        device: w.devices[device.0 as usize].name.clone(),
                        start: start as f64 / unit,
                        end: e.time as f64 / unit,
                    });
                }
            }
            _ => {}
        }
    }
    Ok(Timeline {
        model: model.to_string(),
        makespan_units: res.makespan() as f64 / unit,
        bars,
        final_states: w.devices.iter().map(|d| d.name.clone()).zip(res.final_states).collect(),
    })
}

/// One generated workload run under every main model plus S-GSV.
pub fn compare_models(seed: u64, routines: usize, rho: usize, fail_pct: f64) -> Result<Vec<MetricsReport>, String> {
    let p = MicrobenchParams { routines, rho, fail_pct, ..MicrobenchParams::default() };
    let w = generate_microbenchmark(&p, seed).map_err(|e| e.to_string())?;
    let cfg = EngineConfig::default();
    let mut models = VisibilityModel::MAIN.to_vec();
    models.insert(2, VisibilityModel::Sgsv);
    models
        .into_iter()
        .map(|m| {
            let res = run(m, &w, &cfg).map_err(|e| e.to_string())?;
            Ok(report(&w, &res, false))
        })
        .collect()
}

pub fn breakfast_trace(model: &str) -> Result<String, String> {
    let model: VisibilityModel = model.parse().map_err(|e| format!("{e}"))?;
    let res = run(model, &breakfast_workload(), &EngineConfig::default()).map_err(|e| e.to_string())?;
    Ok(res.trace.to_jsonl())
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = breakfastTimeline)]
pub fn breakfast_timeline_js(model: &str) -> Result<String, JsValue> {
    js(breakfast_timeline(model))
}

#[wasm_bindgen(js_name = compareModels)]
pub fn compare_models_js(seed: u32, routines: u32, rho: u32, fail_pct: f64) -> Result<String, JsValue> {
    js(compare_models(seed as u64, routines as usize, rho as usize, fail_pct))
}

#[wasm_bindgen(js_name = breakfastTrace)]
pub fn breakfast_trace_js(model: &str) -> Result<String, JsValue> {
    breakfast_trace(model).map_err(|e| JsValue::from_str(&e))
}
