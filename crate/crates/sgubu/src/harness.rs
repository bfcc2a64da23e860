//! Experiment harness: configuration, deterministic outputs, the three
//! experiment drivers, and the verification registry behind the CLI.
//!
//! Every driver follows the same discipline: the cell grid is enumerated in
//! a fixed order, each cell runs single-threaded on substreams derived from
//! the master seed and a stable cell key, and results are merged in grid
//! order. Thread count therefore changes wall time only, never a byte of
//! the CSV.

pub mod blr;
pub mod config;
pub mod output;
pub mod spike;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, Method, NoiseSpec, TargetSpec};
pub use output::{csv_bytes, Manifest, ResultRow};

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Everything a driver hands back for writing: result rows plus the
/// manifest material (regime tags, divergences, audit notes).
#[derive(Debug, Default)]
pub struct RunArtifacts {
    pub rows: Vec<ResultRow>,
    pub out_of_regime: Vec<String>,
    pub divergences: Vec<output::DivergenceRecord>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

/// Writes the CSV and manifest for one finished run and returns their paths.
pub fn write_outputs(
    experiment: &str,
    config: &ExperimentConfig,
    artifacts: &RunArtifacts,
    wall_time_s: f64,
) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, manifest_path) = output::output_paths(&config.out_dir, experiment);
    output::write_csv(&csv_path, &artifacts.rows)?;
    let manifest = Manifest {
        experiment: experiment.to_string(),
        version: output::version_string(),
        csv_file: csv_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config: config.clone(),
        out_of_regime: artifacts.out_of_regime.clone(),
        divergences: artifacts.divergences.clone(),
        notes: artifacts.notes.clone(),
        wall_time_s,
    };
    output::write_manifest(&manifest_path, &manifest)?;
    Ok((csv_path, manifest_path))
}

/// A dedicated pool sized by the config; 0 threads means one per core.
/// Cells parallelize across the pool but stay single-threaded inside.
pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool construction failed: {e}")))
}

/// Mean and between-replica standard error. NaN inputs propagate; fewer
/// than two values leave the error NaN.
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Least-squares slope of y against x with its standard error from the
/// residual variance. Needs two distinct abscissae; with exactly two
/// points the fit is exact and the error is 0.
pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return None;
    }
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    if n == 2 {
        return Some((slope, 0.0));
    }
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let se = (ssr / (n - 2) as f64 / sxx).sqrt();
    Some((slope, se))
}
