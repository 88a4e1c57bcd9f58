//! CSV and JSON artifacts.
//!
//! CSV files have a single header line and a fixed column order. Floats use
//! 17 significant digits so that values round-trip exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{CONTROL_NAMES, STATE_NAMES};
use crate::experiments::{channel_names, ComparisonReport, SpectrumSummary};
use crate::trainer::{BufferSnapshot, RunResult, SafetyLogEntry};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_row<W: Write>(w: &mut W, cells: impl IntoIterator<Item = String>) -> io::Result<()> {
    let line = cells.into_iter().collect::<Vec<_>>().join(",");
    writeln!(w, "{line}")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

pub fn trajectory_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    h.push("j_cost".into());
    h.extend(CONTROL_NAMES.iter().map(|c| format!("raw_{c}")));
    h.extend(CONTROL_NAMES.iter().map(|c| format!("filtered_{c}")));
    h.push("value".into());
    h
}

pub fn write_trajectory_csv(path: &Path, run: &RunResult) -> io::Result<()> {
    let mut w = create(path)?;
    write_row(&mut w, trajectory_header())?;
    for p in &run.trajectory {
        let mut row = vec![fmt_f64(p.t)];
        row.extend(p.state.augmented().iter().map(|v| fmt_f64(*v)));
        row.extend(p.raw.iter().map(|v| fmt_f64(*v)));
        row.extend(p.filtered.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(p.value));
        write_row(&mut w, row)?;
    }
    w.flush()
}

pub fn write_spectrum_csv(path: &Path, s: &SpectrumSummary) -> io::Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["t".to_string()];
    for c in channel_names() {
        header.extend(["min", "mean", "max"].iter().map(|k| format!("{c}_{k}")));
    }
    write_row(&mut w, header)?;
    for (k, t) in s.times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        for c in 0..s.min[k].len() {
            row.push(fmt_f64(s.min[k][c]));
            row.push(fmt_f64(s.mean[k][c]));
            row.push(fmt_f64(s.max[k][c]));
        }
        write_row(&mut w, row)?;
    }
    w.flush()
}

/// Per-run final outcomes of one spectrum batch.
pub fn write_runs_csv(path: &Path, s: &SpectrumSummary) -> io::Result<()> {
    let mut w = create(path)?;
    let mut header = vec![
        "run".to_string(),
        "status".into(),
        "objective".into(),
        "spread".into(),
    ];
    header.extend(STATE_NAMES.iter().map(|n| format!("x0_{n}")));
    header.extend(STATE_NAMES.iter().map(|n| format!("final_{n}")));
    header.push("message".into());
    write_row(&mut w, header)?;
    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for r in &s.records {
        let mut row = vec![
            r.run_id.to_string(),
            "ok".into(),
            fmt_f64(r.objective),
            fmt_f64(r.spread),
        ];
        row.extend(r.x0.epi().iter().map(|v| fmt_f64(*v)));
        row.extend(r.final_state.epi().iter().map(|v| fmt_f64(*v)));
        row.push(String::new());
        rows.push((r.run_id, row));
    }
    for f in &s.failures {
        let mut row = vec![
            f.run_id.to_string(),
            "failed".into(),
            String::new(),
            String::new(),
        ];
        row.extend(f.x0.epi().iter().map(|v| fmt_f64(*v)));
        row.extend(std::iter::repeat_n(String::new(), STATE_NAMES.len()));
        row.push(csv_quote(&f.message));
        rows.push((f.run_id, row));
    }
    rows.sort_by_key(|(id, _)| *id);
    for (_, row) in rows {
        write_row(&mut w, row)?;
    }
    w.flush()
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Scenario rows, one column per method, then a final row of average ranks.
pub fn write_friedman_csv(path: &Path, report: &ComparisonReport) -> io::Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["scenario".to_string()];
    header.extend(report.methods.iter().map(|m| m.to_string()));
    write_row(&mut w, header)?;
    for (sc, row) in report.scenarios.iter().zip(&report.objective_matrix) {
        let mut cells = vec![sc.to_string()];
        cells.extend(row.iter().map(|v| fmt_opt(*v)));
        write_row(&mut w, cells)?;
    }
    let mut ranks = vec!["rank".to_string()];
    match &report.friedman {
        Some(f) => ranks.extend(f.average.iter().map(|v| fmt_f64(*v))),
        None => ranks.extend(report.methods.iter().map(|_| String::new())),
    }
    write_row(&mut w, ranks)?;
    w.flush()
}

/// Mean accumulated objective over time for every (scenario, method) cell.
pub fn write_mean_cost_csv(path: &Path, report: &ComparisonReport) -> io::Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["t".to_string()];
    let mut cols = Vec::new();
    for s in &report.spectra {
        header.push(format!("{}_{}", s.scenario, s.method));
        cols.push(
            s.mean
                .iter()
                .map(|row| row[row.len() - 1])
                .collect::<Vec<f64>>(),
        );
    }
    write_row(&mut w, header)?;
    let times = report
        .spectra
        .iter()
        .max_by_key(|s| s.times.len())
        .map(|s| s.times.clone())
        .unwrap_or_default();
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(cols.iter().map(|c| fmt_opt(c.get(k).copied())));
        write_row(&mut w, row)?;
    }
    w.flush()
}

pub fn write_safety_csv(path: &Path, log: &[SafetyLogEntry]) -> io::Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["step".to_string(), "t".into()];
    header.extend(CONTROL_NAMES.iter().map(|c| format!("raw_{c}")));
    header.extend(CONTROL_NAMES.iter().map(|c| format!("filtered_{c}")));
    header.extend(["clamped", "backoffs", "budget_cutoff", "fallback_zero"].map(String::from));
    write_row(&mut w, header)?;
    for e in log {
        let iv = &e.intervention;
        let mut row = vec![e.step.to_string(), fmt_f64(e.t)];
        row.extend(iv.raw.iter().map(|v| fmt_f64(*v)));
        row.extend(iv.filtered.iter().map(|v| fmt_f64(*v)));
        row.push(
            iv.clamped
                .iter()
                .map(|i| CONTROL_NAMES[*i])
                .collect::<Vec<_>>()
                .join(";"),
        );
        row.push(
            iv.backoffs
                .iter()
                .map(|b| format!("{}x{}", b.label, fmt_f64(b.scale)))
                .collect::<Vec<_>>()
                .join(";"),
        );
        row.push(iv.budget_cutoff.to_string());
        row.push(iv.fallback_zero.to_string());
        write_row(&mut w, row)?;
    }
    w.flush()
}

/// One row per cluster per snapshot.
pub fn write_clusters_csv(path: &Path, trace: &[BufferSnapshot]) -> io::Result<()> {
    let mut w = create(path)?;
    let mut header = vec![
        "step".to_string(),
        "t".into(),
        "id".into(),
        "sigma".into(),
        "count".into(),
    ];
    header.extend(STATE_NAMES.iter().map(|n| format!("c_{n}")));
    header.extend(CONTROL_NAMES.iter().map(|n| format!("c_{n}")));
    write_row(&mut w, header)?;
    for snap in trace {
        for c in &snap.clusters {
            let mut row = vec![
                snap.step.to_string(),
                fmt_f64(snap.t),
                c.id.to_string(),
                fmt_f64(c.sigma),
                c.count.to_string(),
            ];
            row.extend(c.center.iter().map(|v| fmt_f64(*v)));
            write_row(&mut w, row)?;
        }
    }
    w.flush()
}
