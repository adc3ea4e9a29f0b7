use std::fmt::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::run::{run, run_concurrent, RunResult, RunSummary};
use super::Scenario;

/// Success counts for one start position. Attempt 2 counts runs that
/// succeeded after exactly one retried failure.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PositionRow {
    pub position: String,
    pub trials: u64,
    pub successes: u64,
    pub attempt1: u64,
    pub attempt2: u64,
}

impl PositionRow {
    fn add(&mut self, s: &RunSummary) {
        self.trials += 1;
        if s.outcome == "root_success" {
            self.successes += 1;
            match s.root_child_failures {
                0 => self.attempt1 += 1,
                1 => self.attempt2 += 1,
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<PositionRow>,
    pub total: PositionRow,
    pub runs: Vec<RunSummary>,
}

impl BatchReport {
    pub fn all_succeeded(&self) -> bool {
        self.total.successes == self.total.trials
    }

    /// Plain-text table: one row per position plus the total.
    pub fn render(&self) -> String {
        let cell = |n: u64, d: u64| {
            let pct = if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
            format!("{n}/{d} ({pct:.0}%)")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>7} {:>16} {:>16} {:>16}", "Position", "Trials", "Overall", "Attempt 1", "Attempt 2");
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>16} {:>16} {:>16}",
                r.position,
                r.trials,
                cell(r.successes, r.trials),
                cell(r.attempt1, r.trials),
                cell(r.attempt2, r.trials)
            );
        }
        out
    }
}

/// Runs trials `0..trials`; trial `i` starts in position `i mod positions`.
pub fn run_batch(scenario: &Scenario, trials: u64, concurrent: bool) -> BatchReport {
    run_batch_with(scenario, trials, concurrent, |_| {})
}

/// As [`run_batch`], handing each full result to `sink` before its trace is
/// dropped. `sink` runs on worker threads in no particular order.
pub fn run_batch_with<F>(scenario: &Scenario, trials: u64, concurrent: bool, sink: F) -> BatchReport
where
    F: Fn(&RunResult) + Sync,
{
    let runs: Vec<RunSummary> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let result = if concurrent { run_concurrent(scenario, i) } else { run(scenario, i) };
            sink(&result);
            result.summary
        })
        .collect();
    BatchReport::from_runs(scenario, runs)
}

impl BatchReport {
    /// `runs[i]` must be trial `i`.
    pub fn from_runs(scenario: &Scenario, runs: Vec<RunSummary>) -> Self {
        let names: Vec<String> = match scenario.randomize.first() {
            Some(rule) => rule.boxes.clone(),
            None => vec!["fixed".to_string()],
        };
        let mut rows: Vec<PositionRow> =
            names.iter().map(|n| PositionRow { position: n.clone(), ..Default::default() }).collect();
        let mut total = PositionRow { position: "Total".into(), ..Default::default() };
        for (i, s) in runs.iter().enumerate() {
            rows[i % names.len()].add(s);
            total.add(s);
        }
        BatchReport { scenario: scenario.name.clone(), seed: scenario.seed, rows, total, runs }
    }
}
