//! Trace and summary writers. Column layouts are documented in
//! `docs/trace_format.md` and must not change.

use std::io::Write;

use super::run::{RunSummary, TickRow, Trace};
use crate::bt::TickStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Summary,
    PlotData,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 3] = [ExportFormat::Csv, ExportFormat::Summary, ExportFormat::PlotData];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "summary" => Some(Self::Summary),
            "plotdata" => Some(Self::PlotData),
            _ => None,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn control_header(trace: &Trace) -> Vec<String> {
    let mut h: Vec<String> = ["step", "t", "revision", "active"].map(String::from).to_vec();
    h.extend((1..=trace.dof).map(|j| format!("q_{j}")));
    h.extend((1..=trace.dof).map(|j| format!("qdot_{j}")));
    h.extend(["ee_x", "ee_y", "ee_z", "min_clearance"].map(String::from));
    h.extend(trace.task_ids.iter().map(|id| format!("err_{id}")));
    h.extend(trace.priorities.iter().map(|p| format!("slack_p{p}")));
    h
}

pub fn write_control_csv<W: Write>(trace: &Trace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(control_header(trace))?;
    for r in &trace.control {
        let mut rec = vec![r.step.to_string(), num(r.t), r.revision.to_string(), r.active.join(";")];
        rec.extend(r.q.iter().map(|v| num(*v)));
        rec.extend(r.qdot.iter().map(|v| num(*v)));
        rec.extend(r.ee.iter().map(|v| num(*v)));
        rec.push(opt(r.min_clearance));
        rec.extend(r.errors.iter().map(|e| opt(*e)));
        rec.extend(r.slacks.iter().map(|w| opt(*w)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn status(s: Option<TickStatus>) -> &'static str {
    s.map_or("", TickStatus::as_str)
}

pub fn write_tick_csv<W: Write>(trace: &Trace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["tick", "t", "root"].map(String::from).to_vec();
    header.extend(trace.node_ids.iter().cloned());
    w.write_record(header)?;
    for TickRow { index, t, root, statuses } in &trace.ticks {
        let mut rec = vec![index.to_string(), num(*t), root.as_str().to_string()];
        rec.extend(statuses.iter().map(|s| status(*s).to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Time against per-task `‖e‖`, clearance to every plane and deviation from
/// every line.
pub fn write_plot_csv<W: Write>(trace: &Trace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(trace.task_ids.iter().map(|id| format!("err_{id}")));
    header.extend(trace.planes.iter().map(|(l, _)| format!("clearance_{l}")));
    header.extend(trace.lines.iter().map(|(l, _)| format!("deviation_{l}")));
    w.write_record(header)?;
    for r in &trace.control {
        let x = nalgebra::Vector3::from(r.ee);
        let mut rec = vec![num(r.t)];
        rec.extend(r.errors.iter().map(|e| opt(*e)));
        rec.extend(trace.planes.iter().map(|(_, p)| num(p.clearance(&x))));
        rec.extend(trace.lines.iter().map(|(_, l)| num(l.deviation(&x).norm())));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(summary: &RunSummary) -> String {
    toml::to_string(summary).expect("summary fields are plain values")
}
