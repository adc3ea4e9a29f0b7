//! Browser bindings: edit a scenario, run it and scrub through the trace.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`.

use sotbt::scenario::{builtin, run, write_control_csv, write_summary, RunResult, Scenario};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub fn scenario_names() -> Vec<String> {
    builtin::names().map(String::from).collect()
}

#[wasm_bindgen]
pub fn scenario_source(name: &str) -> Option<String> {
    builtin::source(name).map(String::from)
}

/// One-line description of a valid scenario.
pub fn describe(text: &str) -> Result<String, String> {
    let s = Scenario::from_toml(text, None).map_err(|e| e.to_string())?;
    Ok(format!(
        "{}: {} tasks, {} disturbances, max {} s at {} s x {}",
        s.name,
        s.tasks.len(),
        s.disturbances.len(),
        s.max_time,
        s.rates.control_dt,
        s.rates.ticks_ratio
    ))
}

#[wasm_bindgen]
pub fn validate(text: &str) -> Result<String, JsError> {
    describe(text).map_err(|e| JsError::new(&e))
}

/// A finished run. Per-step series share the index of [`Simulation::times`].
#[wasm_bindgen]
pub struct Simulation {
    result: RunResult,
}

impl Simulation {
    /// Model files cannot be fetched in the browser, so only builtin models
    /// resolve.
    pub fn from_text(text: &str, seed: Option<u32>, trial: u32) -> Result<Self, String> {
        let mut scenario = Scenario::from_toml(text, None).map_err(|e| e.to_string())?;
        if let Some(seed) = seed {
            scenario.seed = seed.into();
        }
        Ok(Self { result: run(&scenario, trial.into()) })
    }

    pub fn result(&self) -> &RunResult {
        &self.result
    }
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(text: &str, seed: Option<u32>, trial: u32) -> Result<Simulation, JsError> {
        Self::from_text(text, seed, trial).map_err(|e| JsError::new(&e))
    }

    pub fn outcome(&self) -> String {
        self.result.outcome.as_str().to_string()
    }

    pub fn summary(&self) -> String {
        write_summary(&self.result.summary)
    }

    pub fn len(&self) -> usize {
        self.result.trace.control.len()
    }

    pub fn is_empty(&self) -> bool {
        self.result.trace.control.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.result.trace.control.iter().map(|c| c.t).collect()
    }

    /// End-effector positions, flattened `x, y, z` per step.
    pub fn ee_path(&self) -> Vec<f64> {
        self.result.trace.control.iter().flat_map(|c| c.ee).collect()
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.result.trace.task_ids.clone()
    }

    /// `‖e‖` of task `index` per step, NaN while the task is inactive.
    pub fn task_errors(&self, index: usize) -> Vec<f64> {
        self.result
            .trace
            .control
            .iter()
            .map(|c| c.errors.get(index).copied().flatten().unwrap_or(f64::NAN))
            .collect()
    }

    /// Minimum plane clearance per step, NaN without planes.
    pub fn clearance(&self) -> Vec<f64> {
        self.result.trace.control.iter().map(|c| c.min_clearance.unwrap_or(f64::NAN)).collect()
    }

    /// Active task ids at `step`, in solve order.
    pub fn active_at(&self, step: usize) -> Vec<String> {
        self.result.trace.control.get(step).map(|c| c.active.clone()).unwrap_or_default()
    }

    /// `node: status` for every node ticked at the last tick at or before `step`.
    pub fn statuses_at(&self, step: usize) -> Vec<String> {
        let trace = &self.result.trace;
        let Some(t) = trace.control.get(step).map(|c| c.t) else { return Vec::new() };
        let Some(tick) = trace.ticks.iter().take_while(|k| k.t <= t).last() else { return Vec::new() };
        trace
            .node_ids
            .iter()
            .zip(&tick.statuses)
            .filter_map(|(id, s)| s.map(|s| format!("{id}: {s}")))
            .collect()
    }

    /// `t  text` for every runtime event.
    pub fn events(&self) -> Vec<String> {
        self.result.trace.events.iter().map(|e| format!("{:.3}  {}", e.t, e.text)).collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut buf = Vec::new();
        write_control_csv(&self.result.trace, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}
