//! Result rows, deterministic CSV encoding, and the run manifest.
//!
//! The CSV bytes are a pure function of the rows: fixed header, rows sorted
//! by their full key, floats printed with the shortest round-trip form.
//! Wall-clock time and other environment facts live in the manifest only,
//! so re-running a config with the same seed reproduces the CSV exactly.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;

pub const CSV_HEADER: &str = "experiment,method,h,gamma,metric,value,stderr,n,seed";

/// One aggregated measurement: a metric value with its between-replica
/// standard error, keyed by experiment, method, stepsize, and friction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub h: f64,
    pub gamma: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
}

fn row_key(row: &ResultRow) -> (&str, &str, &str, f64, f64, u64) {
    (&row.experiment, &row.method, &row.metric, row.h, row.gamma, row.seed)
}

/// Sorts rows by (experiment, method, metric, h, gamma, seed). Floats are
/// ordered by total_cmp so NaN keys cannot poison the order.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        let (ea, ma, ta, ha, ga, sa) = row_key(a);
        let (eb, mb, tb, hb, gb, sb) = row_key(b);
        ea.cmp(eb)
            .then_with(|| ma.cmp(mb))
            .then_with(|| ta.cmp(tb))
            .then_with(|| ha.total_cmp(&hb))
            .then_with(|| ga.total_cmp(&gb))
            .then_with(|| sa.cmp(&sb))
    });
}

fn fmt_float(x: f64) -> String {
    // Display gives the shortest representation that round-trips; NaN
    // prints as "NaN", which readers must treat as a diverged cell.
    format!("{x}")
}

/// Encodes rows as CSV bytes. Sorting happens here so callers cannot leak
/// scheduling order into the file.
pub fn csv_bytes(rows: &[ResultRow]) -> Vec<u8> {
    let mut sorted: Vec<ResultRow> = rows.to_vec();
    sort_rows(&mut sorted);
    let mut out = Vec::new();
    out.extend_from_slice(CSV_HEADER.as_bytes());
    out.push(b'\n');
    for row in &sorted {
        // Keys are fixed vocabularies without commas or quotes, so plain
        // joining is already valid CSV.
        let line = format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.experiment,
            row.method,
            fmt_float(row.h),
            fmt_float(row.gamma),
            row.metric,
            fmt_float(row.value),
            fmt_float(row.stderr),
            row.n,
            row.seed,
        );
        out.extend_from_slice(line.as_bytes());
    }
    out
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&csv_bytes(rows))?;
    Ok(())
}

/// A cell whose chain left the finite range; the sweep reports it as NaN
/// and keeps going.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRecord {
    pub cell: String,
    pub message: String,
}

/// Sidecar metadata for one run: the resolved config, provenance, regime
/// tags, divergences, and driver audit notes. Wall time lives here, never
/// in the CSV.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub csv_file: String,
    pub config: ExperimentConfig,
    pub out_of_regime: Vec<String>,
    pub divergences: Vec<DivergenceRecord>,
    pub notes: BTreeMap<String, serde_json::Value>,
    pub wall_time_s: f64,
}

/// Build provenance: `git describe` when available, else the crate version.
pub fn version_string() -> String {
    let described = Command::new("git")
        .args(["describe", "--always", "--tags", "--dirty"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .and_then(|out| String::from_utf8(out.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match described {
        Some(tag) => format!("{} ({tag})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Output paths for one experiment under the configured directory.
pub fn output_paths(out_dir: &Path, experiment: &str) -> (PathBuf, PathBuf) {
    (
        out_dir.join(format!("{experiment}.csv")),
        out_dir.join(format!("{experiment}_manifest.json")),
    )
}
