//! File formats: per-round metrics CSV, run summaries and dataset dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use byzsgd_core::model::LocalDataset;
use byzsgd_core::trainer::MetricsRow;
use serde::Serialize;

use crate::SimError;

pub const METRICS_HEADER: &str =
    "round,dist_sq_to_opt,grad_norm_sq,est_error,active_count,honest_removed,filter_rounds,sum_c_tau_final";

/// Shortest round-trip decimal; non-finite values print as `NaN`/`inf`.
fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:?}")
    }
}

fn metrics_record(row: &MetricsRow) -> [String; 8] {
    [
        row.round.to_string(),
        num(row.dist_sq_to_opt),
        num(row.grad_norm_sq),
        num(row.est_error),
        row.active_count.to_string(),
        row.honest_removed.to_string(),
        row.filter_rounds.to_string(),
        num(row.sum_c_tau_final),
    ]
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<(), SimError> {
    let mut out = csv_writer(w);
    out.write_record(METRICS_HEADER.split(','))?;
    for row in rows {
        out.write_record(metrics_record(row))?;
    }
    out.flush()?;
    Ok(())
}

/// Per-round seed average. Count columns become fractional.
pub fn write_mean_metrics<W: Write>(w: W, runs: &[Vec<MetricsRow>]) -> Result<(), SimError> {
    let mut out = csv_writer(w);
    out.write_record(METRICS_HEADER.split(','))?;
    let rounds = runs.iter().map(|r| r.len()).min().unwrap_or(0);
    for t in 0..rounds {
        let n = runs.len() as f64;
        let avg = |f: &dyn Fn(&MetricsRow) -> f64| runs.iter().map(|r| f(&r[t])).sum::<f64>() / n;
        out.write_record([
            runs[0][t].round.to_string(),
            num(avg(&|r| r.dist_sq_to_opt)),
            num(avg(&|r| r.grad_norm_sq)),
            num(avg(&|r| r.est_error)),
            num(avg(&|r| r.active_count as f64)),
            num(avg(&|r| r.honest_removed as f64)),
            num(avg(&|r| r.filter_rounds as f64)),
            num(avg(&|r| r.sum_c_tau_final)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// All replicates in one file, ordered by replicate index.
pub fn write_merged_metrics<W: Write>(w: W, runs: &[Vec<MetricsRow>]) -> Result<(), SimError> {
    let mut out = csv_writer(w);
    out.write_record(std::iter::once("replicate").chain(METRICS_HEADER.split(',')))?;
    for (i, rows) in runs.iter().enumerate() {
        for row in rows {
            out.write_record(std::iter::once(i.to_string()).chain(metrics_record(row)))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, SimError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(SimError::runtime(format!("unexpected metrics header in {}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, SimError> {
            rec[i].parse::<f64>().map_err(|e| SimError::runtime(format!("bad number {:?}: {e}", &rec[i])))
        };
        let u = |i: usize| -> Result<usize, SimError> {
            rec[i].parse::<usize>().map_err(|e| SimError::runtime(format!("bad count {:?}: {e}", &rec[i])))
        };
        rows.push(MetricsRow {
            round: u(0)?,
            dist_sq_to_opt: f(1)?,
            grad_norm_sq: f(2)?,
            est_error: f(3)?,
            active_count: u(4)?,
            honest_removed: u(5)?,
            filter_rounds: u(6)?,
            sum_c_tau_final: f(7)?,
        });
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes one `worker_<r>.csv` per dataset with columns `x0..x{p-1},y`.
pub fn dump_datasets(dir: &Path, worlds: &[LocalDataset]) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    for (r, ds) in worlds.iter().enumerate() {
        let mut out = csv_writer(fs::File::create(dir.join(format!("worker_{r}.csv")))?);
        let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
        out.write_record(&header)?;
        for (w, y) in ds.samples() {
            out.write_record(w.iter().copied().chain([y]).map(num))?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Reads `worker_0.csv`, `worker_1.csv`, … until the first missing index.
pub fn load_datasets(dir: &Path) -> Result<Vec<LocalDataset>, SimError> {
    let mut worlds = Vec::new();
    loop {
        let path = dir.join(format!("worker_{}.csv", worlds.len()));
        if !path.exists() {
            break;
        }
        let mut rdr = csv::Reader::from_path(&path)?;
        let cols = rdr.headers()?.len();
        if cols < 2 {
            return Err(SimError::config(format!("{} needs at least one feature and a response", path.display())));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let vals = rec?
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| SimError::config(format!("{}: {e}", path.display())))?;
            let (w, y) = vals.split_at(cols - 1);
            rows.push((w.to_vec(), y[0]));
        }
        worlds.push(LocalDataset::from_rows(&rows).map_err(SimError::from_config)?);
    }
    if worlds.is_empty() {
        return Err(SimError::config(format!("no worker_0.csv in {}", dir.display())));
    }
    Ok(worlds)
}
