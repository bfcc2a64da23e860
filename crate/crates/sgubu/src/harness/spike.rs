//! High-dimensional spike-noise table: long-run bias of the top-k
//! coordinate norm under sparse spike gradient noise, a covariance-matched
//! Gaussian noise column, and an exact-gradient control, across dimensions.
//!
//! The protocol ties every quantity to the dimension: h = d^-alpha,
//! mixture probability p = h d^(1-alpha)/ln d, spike magnitude
//! s = (8/h) sqrt(ln d), and k = ceil(d^(1-alpha)/ln d). The matched
//! Gaussian column uses N(0, c^2 I) with c^2 = p s^2/d, the spike law's
//! per-coordinate covariance, so the two columns differ only in tail
//! shape. The resolved numbers land in the manifest notes for audit.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradients::{FullGradient, GradientEstimator, NoiseInjectedGradient, NoiseLaw, SpikeNoiseLaw};
use crate::harness::config::{enforce_regime, ExperimentConfig, Method};
use crate::harness::output::{DivergenceRecord, ResultRow};
use crate::harness::{mean_and_se, thread_pool, RunArtifacts};
use crate::integrators::{derive_rng, fill_standard_normal, run_chain_with, ChainParams, ChainRngs, IntegratorKind, KineticState};
use crate::metrics::f_k;
use crate::model::DiagonalQuadraticPotential;

pub const EXPERIMENT: &str = "spike";

/// Protocol quantities resolved for one dimension.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpikeProtocol {
    pub d: usize,
    pub h: f64,
    pub mixture_probability: f64,
    pub spike_magnitude: f64,
    pub k: usize,
    pub gamma: f64,
    /// Scale of the covariance-matched Gaussian column.
    pub gaussian_c: f64,
    /// Per-coordinate noise covariance p s^2/d shared by both columns.
    pub covariance_scale: f64,
}

/// Resolves the dimension-indexed protocol. Small dimensions are rejected
/// when the formulas leave the valid range (p > 1 or k > d).
pub fn spike_protocol(d: usize, alpha: f64, gamma: f64) -> Result<SpikeProtocol> {
    if d < 2 {
        return Err(Error::Parameter(format!("spike protocol needs d >= 2, got {d}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("spike exponent must lie in (0, 1), got {alpha}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!("friction must be positive, got {gamma}")));
    }
    let df = d as f64;
    let log_d = df.ln();
    let h = df.powf(-alpha);
    let p = h * df.powf(1.0 - alpha) / log_d;
    let s = (8.0 / h) * log_d.sqrt();
    let k = (df.powf(1.0 - alpha) / log_d).ceil() as usize;
    if p > 1.0 {
        return Err(Error::Parameter(format!(
            "spike mixture probability {p:.4} exceeds 1 at d={d}, alpha={alpha}; use a larger dimension"
        )));
    }
    if k > d {
        return Err(Error::Parameter(format!(
            "spike test function needs k <= d, got k={k} at d={d}, alpha={alpha}"
        )));
    }
    let covariance_scale = p * s * s / df;
    Ok(SpikeProtocol {
        d,
        h,
        mixture_probability: p,
        spike_magnitude: s,
        k,
        gamma,
        gaussian_c: covariance_scale.sqrt(),
        covariance_scale,
    })
}

/// Table columns: the spike-noise chain, the covariance-matched Gaussian
/// chain, and an exact-gradient control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Spike,
    Gaussian,
    Control,
}

const COLUMNS: [Column; 3] = [Column::Spike, Column::Gaussian, Column::Control];

impl Column {
    fn label(self) -> &'static str {
        match self {
            Column::Spike => "sg-ubu-spike",
            Column::Gaussian => "sg-ubu-gaussian",
            Column::Control => "ubu",
        }
    }

    fn estimator<'a>(
        self,
        pot: &'a DiagonalQuadraticPotential,
        proto: &SpikeProtocol,
    ) -> Result<Box<dyn GradientEstimator + 'a>> {
        match self {
            Column::Spike => {
                let law = NoiseLaw::Spike(SpikeNoiseLaw::new(
                    proto.spike_magnitude,
                    proto.d,
                    proto.mixture_probability,
                )?);
                Ok(Box::new(NoiseInjectedGradient::new(pot, law)?))
            }
            Column::Gaussian => {
                let law = NoiseLaw::gaussian(proto.gaussian_c)?;
                Ok(Box::new(NoiseInjectedGradient::new(pot, law)?))
            }
            Column::Control => Ok(Box::new(FullGradient::new(pot))),
        }
    }
}

/// One unit of parallel work: a chain column or the exact-target reference.
#[derive(Debug, Clone, Copy)]
enum Cell {
    Chain { dim_index: usize, column: Column },
    Reference { dim_index: usize },
}

struct CellOutcome {
    /// Per-replica chain biases (Chain) or reference means (Reference).
    values: Vec<f64>,
    divergences: Vec<DivergenceRecord>,
}

/// Monte Carlo mean of f_k under the exact standard Gaussian target.
fn reference_mean(proto: &SpikeProtocol, rng: &mut dyn RngCore, draws: u64) -> f64 {
    let mut z = vec![0.0; proto.d];
    let mut sum = 0.0;
    for _ in 0..draws {
        fill_standard_normal(rng, &mut z);
        sum += f_k(&z, proto.k).expect("k is within 1..=d by protocol construction");
    }
    sum / draws as f64
}

/// Long-run average of f_k along one chain minus a fresh exact-target
/// reference average from the replica's baseline substream.
fn run_chain_replica(
    config: &ExperimentConfig,
    proto: &SpikeProtocol,
    column: Column,
    key: &str,
) -> Result<f64> {
    let pot = DiagonalQuadraticPotential::standard_gaussian(proto.d)?;
    let estimator = column.estimator(&pot, proto)?;
    let mut rngs = ChainRngs::new(config.seed, key);
    let initial = KineticState::new(vec![0.0; proto.d], vec![0.0; proto.d])?;
    let params = ChainParams {
        h: proto.h,
        gamma: proto.gamma,
        n_steps: (config.spike.burn_in + config.spike.n_samples) as usize,
        burn_in: config.spike.burn_in as usize,
        thin: 1,
    };
    let mut sum = 0.0;
    let mut count = 0u64;
    let mut grad = |x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]| estimator.sample_into(x, rng, out);
    run_chain_with(IntegratorKind::Ubu, &params, &initial, &mut grad, &mut rngs, &mut |_, x, _| {
        sum += f_k(x, proto.k).expect("k is within 1..=d by protocol construction");
        count += 1;
    })?;
    let chain_mean = sum / count as f64;
    let mut baseline = derive_rng(config.seed, key, "target-baseline");
    Ok(chain_mean - reference_mean(proto, &mut baseline, config.spike.reference_draws))
}

fn run_cell(config: &ExperimentConfig, protocols: &[SpikeProtocol], cell: &Cell) -> Result<CellOutcome> {
    let mut values = Vec::new();
    let mut divergences = Vec::new();
    match cell {
        Cell::Chain { dim_index, column } => {
            let proto = &protocols[*dim_index];
            for replica in 0..config.spike.replicas {
                let key = format!("{EXPERIMENT}/{}/d={}/rep={replica}", column.label(), proto.d);
                match run_chain_replica(config, proto, *column, &key) {
                    Ok(bias) => values.push(bias),
                    Err(Error::Numeric(message)) => {
                        divergences.push(DivergenceRecord { cell: key, message });
                        values.push(f64::NAN);
                    }
                    Err(other) => return Err(other),
                }
            }
        }
        Cell::Reference { dim_index } => {
            let proto = &protocols[*dim_index];
            for replica in 0..config.spike.replicas {
                let key = format!("{EXPERIMENT}/exact/d={}/rep={replica}", proto.d);
                let mut rng = derive_rng(config.seed, &key, "target-baseline");
                values.push(reference_mean(proto, &mut rng, config.spike.reference_draws));
            }
        }
    }
    Ok(CellOutcome { values, divergences })
}

pub fn run_spike_table(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let protocols: Vec<SpikeProtocol> = config
        .spike
        .dims
        .iter()
        .map(|&d| spike_protocol(d, config.spike.alpha, config.spike.gamma))
        .collect::<Result<_>>()?;
    // All three columns run the kinetic integrator at the protocol
    // stepsize, so one guard entry per dimension covers the table.
    let hs: Vec<f64> = protocols.iter().map(|p| p.h).collect();
    let out_of_regime = enforce_regime(
        &[Method::SgUbu],
        &hs,
        &[config.spike.gamma],
        config.allow_out_of_regime,
    )?;

    let mut cells = Vec::new();
    for dim_index in 0..protocols.len() {
        for column in COLUMNS {
            cells.push(Cell::Chain { dim_index, column });
        }
        cells.push(Cell::Reference { dim_index });
    }
    let pool = thread_pool(config.threads)?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(config, &protocols, cell))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut artifacts = RunArtifacts { out_of_regime, ..Default::default() };
    // (column, dim) -> (bias, se) for the growth rows.
    let mut table: Vec<(Column, usize, f64, f64)> = Vec::new();
    for (cell, outcome) in cells.iter().zip(&outcomes) {
        artifacts.divergences.extend(outcome.divergences.iter().cloned());
        let (value, stderr) = mean_and_se(&outcome.values);
        match cell {
            Cell::Chain { dim_index, column } => {
                let proto = &protocols[*dim_index];
                table.push((*column, proto.d, value, stderr));
                artifacts.rows.push(ResultRow {
                    experiment: EXPERIMENT.into(),
                    method: column.label().into(),
                    h: proto.h,
                    gamma: proto.gamma,
                    metric: format!("fk_bias_d{}", proto.d),
                    value,
                    stderr,
                    n: config.spike.n_samples,
                    seed: config.seed,
                });
            }
            Cell::Reference { dim_index } => {
                let proto = &protocols[*dim_index];
                artifacts.rows.push(ResultRow {
                    experiment: EXPERIMENT.into(),
                    method: "exact".into(),
                    h: 0.0,
                    gamma: 0.0,
                    metric: format!("fk_ref_d{}", proto.d),
                    value,
                    stderr,
                    n: config.spike.reference_draws,
                    seed: config.seed,
                });
            }
        }
    }

    // Bias growth between consecutive dimensions for the two noisy
    // columns; the control column's bias is a numerical floor, so a ratio
    // there would be noise over noise.
    for pair in protocols.windows(2) {
        let (lo, hi) = (pair[0].d, pair[1].d);
        for column in [Column::Spike, Column::Gaussian] {
            let find = |d: usize| table.iter().find(|(c, td, _, _)| *c == column && *td == d);
            let (Some((_, _, b_lo, se_lo)), Some((_, _, b_hi, se_hi))) = (find(lo), find(hi)) else {
                continue;
            };
            let ratio = b_hi / b_lo;
            let stderr = if ratio.is_finite() && *b_lo != 0.0 && *b_hi != 0.0 {
                ratio.abs() * ((se_lo / b_lo).powi(2) + (se_hi / b_hi).powi(2)).sqrt()
            } else {
                f64::NAN
            };
            artifacts.rows.push(ResultRow {
                experiment: EXPERIMENT.into(),
                method: column.label().into(),
                h: 0.0,
                gamma: config.spike.gamma,
                metric: format!("fk_growth_d{hi}_over_d{lo}"),
                value: ratio,
                stderr,
                n: config.spike.n_samples,
                seed: config.seed,
            });
        }
    }

    for proto in &protocols {
        artifacts
            .notes
            .insert(format!("spike_protocol_d{}", proto.d), serde_json::to_value(proto)?);
    }
    Ok(artifacts)
}
