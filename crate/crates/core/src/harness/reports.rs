//! CSV report tables, plot-data files, and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifact::{write_json, RunManifest};
use super::evaluate::{
    heatmap, ranked, ComparisonRow, FrontierRow, SweepRow, COMPARISON_HEADER, FRONTIER_HEADER,
    HEATMAP_HEADER, SWEEP_HEADER,
};
use crate::error::{Error, Result};

pub const COMPARISON_FILE: &str = "policy_comparison.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const HEATMAP_FILE: &str = "sweep_heatmap.csv";
pub const FRONTIER_FILE: &str = "frontier.csv";
pub const FRONTIER_PLOT_FILE: &str = "plots/frontier_curve.csv";
pub const HEATMAP_PLOT_FILE: &str = "plots/heatmap_grid.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default)]
pub struct Reports {
    pub comparison: Vec<ComparisonRow>,
    pub sweep: Vec<SweepRow>,
    pub frontier: Vec<FrontierRow>,
    pub manifest: Option<RunManifest>,
}

/// Writes a header line and one record per row; empty input leaves just the
/// header.
pub fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_comparison(out_dir: &Path, rows: &[ComparisonRow]) -> Result<Vec<PathBuf>> {
    let path = out_dir.join(COMPARISON_FILE);
    write_table(&path, &COMPARISON_HEADER, rows)?;
    Ok(vec![path])
}

/// Sweep table (best first), long-format heatmap, and the per-K grid.
pub fn write_sweep(out_dir: &Path, rows: &[SweepRow]) -> Result<Vec<PathBuf>> {
    let sweep = out_dir.join(SWEEP_FILE);
    write_table(&sweep, &SWEEP_HEADER, &ranked(rows))?;
    let long = out_dir.join(HEATMAP_FILE);
    write_table(&long, &HEATMAP_HEADER, &heatmap(rows))?;
    let grid = out_dir.join(HEATMAP_PLOT_FILE);
    write_heatmap_grid(&grid, rows)?;
    Ok(vec![sweep, long, grid])
}

/// `k,beta,<one column per λ>` of TTL+ITD values, grid order.
fn write_heatmap_grid(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut lambdas: Vec<f64> = Vec::new();
    for r in rows {
        if !lambdas.contains(&r.lambda) {
            lambdas.push(r.lambda);
        }
    }
    let mut header = vec!["k".to_string(), "beta".to_string()];
    header.extend(lambdas.iter().map(|l| format!("lambda_{l}")));
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.k, r.beta)) {
            keys.push((r.k, r.beta));
        }
    }
    let records: Vec<Vec<String>> = keys
        .iter()
        .map(|&(k, beta)| {
            let mut rec = vec![k.to_string(), beta.to_string()];
            for l in &lambdas {
                let cell = rows
                    .iter()
                    .find(|r| r.k == k && r.beta == beta && r.lambda == *l);
                rec.push(cell.map_or(String::new(), |r| r.v0_ttl_itd.to_string()));
            }
            rec
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(path, &header, &records)
}

pub fn write_frontier(out_dir: &Path, rows: &[FrontierRow]) -> Result<Vec<PathBuf>> {
    let table = out_dir.join(FRONTIER_FILE);
    write_table(&table, &FRONTIER_HEADER, rows)?;
    // curve points in plotting order: x, y, label
    let plot = out_dir.join(FRONTIER_PLOT_FILE);
    let points: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (r.expected_cost, r.v0, r.lambda_cost))
        .collect();
    write_table(&plot, &["expected_cost", "v0", "lambda_cost"], &points)?;
    Ok(vec![table, plot])
}

/// Writes every report file under `out_dir`.
pub fn emit_reports(reports: &Reports, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = write_comparison(out_dir, &reports.comparison)?;
    files.extend(write_sweep(out_dir, &reports.sweep)?);
    files.extend(write_frontier(out_dir, &reports.frontier)?);
    if let Some(m) = &reports.manifest {
        let path = out_dir.join(MANIFEST_FILE);
        write_json(&path, m)?;
        files.push(path);
    }
    Ok(files)
}
