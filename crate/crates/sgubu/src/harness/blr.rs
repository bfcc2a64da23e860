//! Bayesian logistic regression driver: posterior-energy accuracy of the
//! stochastic-gradient samplers on a synthetic dataset, against a
//! full-gradient reference chain run at a much smaller stepsize with a
//! larger budget.
//!
//! The stepsize grid is expressed in units of 1/sqrt(L) with L fitted from
//! the data, and deliberately straddles the kinetic regime boundary
//! h < 1/(2 gamma) at gamma = sqrt(L): the three largest grid points sit
//! outside it, so the full default grid only runs with
//! --allow-out-of-regime.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradients::{FullGradient, GradientEstimator, MinibatchGradient};
use crate::harness::config::{enforce_regime, ExperimentConfig, Method};
use crate::harness::output::{DivergenceRecord, ResultRow};
use crate::harness::{mean_and_se, thread_pool, RunArtifacts};
use crate::integrators::{derive_rng, run_chain_with, ChainParams, ChainRngs, KineticState};
use crate::model::{find_mode, LogisticRegressionPotential, Potential};

pub const EXPERIMENT: &str = "blr";

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Synthetic dataset: rows x_i ~ N(0, I/d) (unit expected norm), a true
/// weight vector w ~ N(0, 9 I) giving logits with standard deviation
/// about 3, and Bernoulli(sigmoid(x_i . w)) labels. Fully determined by
/// the master seed through dedicated substreams.
pub fn synthetic_logistic_data(dim: usize, n_obs: usize, master_seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut w_rng = derive_rng(master_seed, "blr/data", "weights");
    let w: Vec<f64> = (0..dim)
        .map(|_| 3.0 * w_rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let mut x_rng = derive_rng(master_seed, "blr/data", "features");
    let features: Vec<Vec<f64>> = (0..n_obs)
        .map(|_| {
            (0..dim)
                .map(|_| scale * x_rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let mut y_rng = derive_rng(master_seed, "blr/data", "labels");
    let labels: Vec<f64> = features
        .iter()
        .map(|x| {
            let logit: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            f64::from(y_rng.random::<f64>() < sigmoid(logit))
        })
        .collect();
    (features, labels)
}

#[derive(Debug, Clone, Copy)]
enum Cell {
    /// Full-gradient chain at the reference stepsize and enlarged budget.
    Reference,
    Grid { method: Method, h: f64 },
}

struct CellOutcome {
    values: Vec<f64>,
    divergences: Vec<DivergenceRecord>,
}

/// Long-run average posterior energy U(q) along one chain, evaluated on
/// the thinned retained samples.
fn run_replica(
    config: &ExperimentConfig,
    blr: &LogisticRegressionPotential,
    mode: &[f64],
    cell: Cell,
    gamma: f64,
    h_ref: f64,
    key: &str,
) -> Result<f64> {
    let section = &config.blr;
    let (method, h, budget) = match cell {
        Cell::Reference => (Method::Ubu, h_ref, section.n_samples * section.reference_budget_factor),
        Cell::Grid { method, h } => (method, h, section.n_samples),
    };
    let estimator: Box<dyn GradientEstimator + '_> = if method.stochastic() {
        Box::new(MinibatchGradient::new(blr, section.batch)?)
    } else {
        Box::new(FullGradient::new(blr))
    };
    let mut rngs = ChainRngs::new(config.seed, key);
    let initial = KineticState::new(mode.to_vec(), vec![0.0; blr.dim()])?;
    let params = ChainParams {
        h,
        gamma: if method.kinetic() { gamma } else { 0.0 },
        n_steps: (section.burn_in + budget) as usize,
        burn_in: section.burn_in as usize,
        thin: section.thin as usize,
    };
    let mut sum = 0.0;
    let mut count = 0u64;
    let mut grad = |x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]| estimator.sample_into(x, rng, out);
    run_chain_with(method.integrator(), &params, &initial, &mut grad, &mut rngs, &mut |_, x, _| {
        sum += blr.value(x);
        count += 1;
    })?;
    Ok(sum / count as f64)
}

fn run_cell(
    config: &ExperimentConfig,
    blr: &LogisticRegressionPotential,
    mode: &[f64],
    cell: Cell,
    gamma: f64,
    h_ref: f64,
) -> Result<CellOutcome> {
    let mut values = Vec::new();
    let mut divergences = Vec::new();
    for replica in 0..config.blr.replicas {
        let key = match cell {
            Cell::Reference => format!("{EXPERIMENT}/reference/rep={replica}"),
            Cell::Grid { method, h } => {
                format!("{EXPERIMENT}/{}/h={h}/rep={replica}", method.label())
            }
        };
        match run_replica(config, blr, mode, cell, gamma, h_ref, &key) {
            Ok(u) => values.push(u),
            Err(Error::Numeric(message)) => {
                divergences.push(DivergenceRecord { cell: key, message });
                values.push(f64::NAN);
            }
            Err(other) => return Err(other),
        }
    }
    Ok(CellOutcome { values, divergences })
}

pub fn run_blr(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let section = &config.blr;
    let (features, labels) = synthetic_logistic_data(section.dim, section.n_obs, config.seed);
    let blr = LogisticRegressionPotential::new(features, labels, section.prior_variance)?;
    let l = blr.l();
    let gamma = l.sqrt();
    let hs: Vec<f64> = section.h_scales.iter().map(|c| c / gamma).collect();
    let h_ref = section.reference_scale / gamma;
    let out_of_regime = enforce_regime(&config.methods, &hs, &[gamma], config.allow_out_of_regime)?;
    if h_ref >= 1.0 / (2.0 * gamma) {
        return Err(Error::Config(format!(
            "reference stepsize {h_ref} violates h < 1/(2 gamma); lower blr.reference_scale below 0.5"
        )));
    }

    let mode = find_mode(&blr, &vec![0.0; section.dim], None, None).map_err(|e| {
        Error::Numeric(format!(
            "posterior mode search failed on the synthetic data (d={}, n={}, L={l:.3}): {e}",
            section.dim, section.n_obs
        ))
    })?;

    let mut cells = vec![Cell::Reference];
    for &method in &config.methods {
        for &h in &hs {
            cells.push(Cell::Grid { method, h });
        }
    }
    let pool = thread_pool(config.threads)?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(config, &blr, &mode, *cell, gamma, h_ref))
            .collect::<Result<Vec<_>>>()
    })?;

    let retained = section.n_samples / section.thin;
    let (u_ref, se_ref) = mean_and_se(&outcomes[0].values);
    let mut artifacts = RunArtifacts { out_of_regime, ..Default::default() };
    artifacts.divergences.extend(outcomes[0].divergences.iter().cloned());
    artifacts.rows.push(ResultRow {
        experiment: EXPERIMENT.into(),
        method: Method::Ubu.label().into(),
        h: h_ref,
        gamma,
        metric: "u_reference".into(),
        value: u_ref,
        stderr: se_ref,
        n: retained * section.reference_budget_factor,
        seed: config.seed,
    });

    for (cell, outcome) in cells.iter().zip(&outcomes).skip(1) {
        let Cell::Grid { method, h } = cell else { continue };
        artifacts.divergences.extend(outcome.divergences.iter().cloned());
        let (u_mean, se) = mean_and_se(&outcome.values);
        let gamma_row = if method.kinetic() { gamma } else { 0.0 };
        artifacts.rows.push(ResultRow {
            experiment: EXPERIMENT.into(),
            method: method.label().into(),
            h: *h,
            gamma: gamma_row,
            metric: "u_mean".into(),
            value: u_mean,
            stderr: se,
            n: retained,
            seed: config.seed,
        });
        artifacts.rows.push(ResultRow {
            experiment: EXPERIMENT.into(),
            method: method.label().into(),
            h: *h,
            gamma: gamma_row,
            metric: "u_abs_error".into(),
            value: (u_mean - u_ref).abs(),
            stderr: (se * se + se_ref * se_ref).sqrt(),
            n: retained,
            seed: config.seed,
        });
    }

    artifacts.notes.insert(
        "blr_fit".into(),
        serde_json::json!({
            "l": l,
            "m": blr.m(),
            "gamma": gamma,
            "stepsizes": hs,
            "h_ref": h_ref,
            "mode_norm": mode.iter().map(|q| q * q).sum::<f64>().sqrt(),
        }),
    );
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::csv_bytes;

    #[test]
    fn synthetic_data_is_reproducible() {
        let (xa, ya) = synthetic_logistic_data(3, 25, 9);
        let (xb, yb) = synthetic_logistic_data(3, 25, 9);
        assert_eq!(xa, xb);
        assert_eq!(ya, yb);
        assert_eq!(xa.len(), 25);
        assert_eq!(xa[0].len(), 3);
        assert!(ya.iter().all(|y| *y == 0.0 || *y == 1.0));
        // Logits have sd about 3, so both classes appear at n = 25.
        assert!(ya.iter().sum::<f64>() > 0.0);
        assert!(ya.iter().sum::<f64>() < 25.0);
        let (xc, _) = synthetic_logistic_data(3, 25, 10);
        assert_ne!(xa, xc);
    }

    fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig {
            methods: vec![Method::SgUbu, Method::SgEm],
            seed: 23,
            ..Default::default()
        };
        config.blr.dim = 3;
        config.blr.n_obs = 40;
        config.blr.batch = 4;
        config.blr.h_scales = vec![0.25];
        config.blr.n_samples = 2_000;
        config.blr.burn_in = 200;
        config.blr.thin = 5;
        config.blr.replicas = 2;
        config.blr.reference_budget_factor = 2;
        config
    }

    #[test]
    fn tiny_run_reports_reference_and_error_rows() {
        let artifacts = run_blr(&tiny_config()).unwrap();
        assert!(artifacts.divergences.is_empty());
        let reference = artifacts.rows.iter().find(|r| r.metric == "u_reference").unwrap();
        assert!(reference.value.is_finite());
        assert_eq!(reference.method, "ubu");
        let means: Vec<_> = artifacts.rows.iter().filter(|r| r.metric == "u_mean").collect();
        let errors: Vec<_> = artifacts.rows.iter().filter(|r| r.metric == "u_abs_error").collect();
        assert_eq!(means.len(), 2);
        assert_eq!(errors.len(), 2);
        // Posterior energy is bounded below by U at the mode; the chain
        // average must sit above it and near the reference at this small
        // stepsize.
        for row in &means {
            assert!(row.value.is_finite() && row.stderr.is_finite());
        }
        for row in &errors {
            assert!(row.value >= 0.0 && row.value < 5.0, "u_abs_error {}", row.value);
        }
        assert!(artifacts.notes.contains_key("blr_fit"));
    }

    #[test]
    fn default_grid_needs_the_regime_flag() {
        // The three largest default grid points violate h < 1/(2 gamma)
        // by construction.
        let mut config = ExperimentConfig { methods: vec![Method::SgUbu], ..Default::default() };
        config.blr.dim = 3;
        config.blr.n_obs = 40;
        config.blr.batch = 4;
        let err = run_blr(&config).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let message = err.to_string();
        assert_eq!(message.matches("sg-ubu/h=").count(), 3, "{message}");
    }

    #[test]
    fn thread_count_never_changes_the_bytes() {
        let mut config = tiny_config();
        config.threads = 1;
        let one = csv_bytes(&run_blr(&config).unwrap().rows);
        config.threads = 4;
        let four = csv_bytes(&run_blr(&config).unwrap().rows);
        assert_eq!(one, four);
    }

    #[test]
    fn oversized_reference_scale_is_rejected() {
        let mut config = tiny_config();
        config.blr.reference_scale = 0.75;
        config.allow_out_of_regime = true;
        let err = run_blr(&config).unwrap_err();
        assert!(err.to_string().contains("reference_scale"), "{err}");
    }
}
