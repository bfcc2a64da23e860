//! Stepsize bias sweep: long-run 1-D Wasserstein-1 distance between each
//! sampler's occupation measure and exact target draws, swept over a
//! stepsize grid, with a log-log slope fit per method.
//!
//! Divergent cells (overdamped chains above their stability threshold, for
//! instance) report NaN and a manifest record; the sweep keeps going.

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradients::{FullGradient, GradientEstimator, MinibatchGradient, NoiseInjectedGradient, NoiseLaw};
use crate::harness::config::{enforce_regime, ExperimentConfig, Method, NoiseSpec, TargetSpec};
use crate::harness::output::{DivergenceRecord, ResultRow};
use crate::harness::{mean_and_se, ols_slope, thread_pool, RunArtifacts};
use crate::integrators::{derive_rng, ChainParams, ChainRngs, KineticState, run_chain_with};
use crate::metrics::{w1_sorted, SortedSample};
use crate::model::{
    toy_target_moments, DiagonalQuadraticPotential, Potential, QuadraticMixturePotential,
};

pub const EXPERIMENT: &str = "sweep";

/// Resolved sweep target: the potential plus the exact law of the observed
/// coordinate. Multivariate Gaussian targets are observed through their
/// first coordinate, whose marginal is exactly N(0, 1).
enum SweepTarget {
    Toy { pot: QuadraticMixturePotential, mean: f64, sd: f64 },
    Gaussian { pot: DiagonalQuadraticPotential },
}

impl SweepTarget {
    fn build(spec: &TargetSpec) -> Result<Self> {
        match spec {
            TargetSpec::Toy => {
                let pot = QuadraticMixturePotential::toy();
                let (mean, var) = toy_target_moments(&pot);
                Ok(Self::Toy { pot, mean, sd: var.sqrt() })
            }
            TargetSpec::Gaussian { dim } => {
                Ok(Self::Gaussian { pot: DiagonalQuadraticPotential::standard_gaussian(*dim)? })
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Toy { .. } => 1,
            Self::Gaussian { pot } => pot.dim(),
        }
    }

    /// Exact (mean, sd) of the observed coordinate.
    fn marginal(&self) -> (f64, f64) {
        match self {
            Self::Toy { mean, sd, .. } => (*mean, *sd),
            Self::Gaussian { .. } => (0.0, 1.0),
        }
    }

    /// Chains start at the marginal mean with zero velocity.
    fn initial_position(&self) -> Vec<f64> {
        match self {
            Self::Toy { mean, .. } => vec![*mean],
            Self::Gaussian { pot } => vec![0.0; pot.dim()],
        }
    }

    fn estimator<'a>(&'a self, method: Method, noise: &NoiseSpec) -> Result<Box<dyn GradientEstimator + 'a>> {
        let pot: &dyn crate::model::Potential = match self {
            Self::Toy { pot, .. } => pot,
            Self::Gaussian { pot } => pot,
        };
        if !method.stochastic() {
            return Ok(Box::new(FullGradient::new(pot)));
        }
        match (self, noise) {
            (_, NoiseSpec::Gaussian { c }) => {
                Ok(Box::new(NoiseInjectedGradient::new(pot, NoiseLaw::gaussian(*c)?)?))
            }
            (Self::Toy { pot, .. }, NoiseSpec::Minibatch { batch }) => {
                Ok(Box::new(MinibatchGradient::new(pot, *batch)?))
            }
            (Self::Gaussian { .. }, NoiseSpec::Minibatch { .. }) => Err(Error::Config(
                "the gaussian target has no sum structure; use gaussian gradient noise".into(),
            )),
            (_, NoiseSpec::None) => Err(Error::Config(format!(
                "stochastic method {method} needs a noise spec (minibatch or gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CellSpec {
    method: Method,
    h: f64,
    /// Reported friction; 0 for the overdamped method, which has none.
    gamma: f64,
}

struct CellOutcome {
    spec: CellSpec,
    value: f64,
    stderr: f64,
    divergences: Vec<DivergenceRecord>,
}

/// The cell grid in deterministic order. The overdamped method collapses
/// the friction axis to a single gamma = 0 cell per stepsize.
fn cell_grid(config: &ExperimentConfig) -> Vec<CellSpec> {
    let mut specs = Vec::new();
    for &method in &config.methods {
        let gammas: &[f64] = if method.kinetic() { &config.gammas } else { &[0.0] };
        for &gamma in gammas {
            for &h in &config.stepsizes {
                specs.push(CellSpec { method, h, gamma });
            }
        }
    }
    specs
}

fn replica_key(spec: &CellSpec, replica: u32) -> String {
    format!("{EXPERIMENT}/{}/h={}/gamma={}/rep={replica}", spec.method.label(), spec.h, spec.gamma)
}

/// One chain against one fresh exact sample, reduced to a W1 distance.
fn run_replica(config: &ExperimentConfig, target: &SweepTarget, spec: &CellSpec, key: &str) -> Result<f64> {
    let estimator = target.estimator(spec.method, &config.noise)?;
    let mut rngs = ChainRngs::new(config.seed, key);
    let initial = KineticState::new(target.initial_position(), vec![0.0; target.dim()])?;
    let params = ChainParams {
        h: spec.h,
        gamma: spec.gamma,
        n_steps: (config.burn_in + config.n_samples) as usize,
        burn_in: config.burn_in as usize,
        thin: 1,
    };
    let mut positions = Vec::with_capacity(config.n_samples as usize);
    let mut grad = |x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]| estimator.sample_into(x, rng, out);
    run_chain_with(spec.method.integrator(), &params, &initial, &mut grad, &mut rngs, &mut |_, x, _| {
        positions.push(x[0]);
    })?;

    // Fresh exact draws per replica from a dedicated substream, one per
    // retained chain sample, so the comparison is sample-size matched.
    let mut baseline = derive_rng(config.seed, key, "target-baseline");
    let (mean, sd) = target.marginal();
    let exact: Vec<f64> = (0..positions.len())
        .map(|_| mean + sd * rand::Rng::sample::<f64, _>(&mut baseline, rand_distr::StandardNormal))
        .collect();
    w1_sorted(&SortedSample::new(positions)?, &SortedSample::new(exact)?)
}

/// Runs every replica of one cell, mapping chain divergence to NaN plus a
/// manifest record instead of aborting the sweep.
fn run_cell(config: &ExperimentConfig, target: &SweepTarget, spec: &CellSpec) -> Result<CellOutcome> {
    let mut biases = Vec::with_capacity(config.replicas as usize);
    let mut divergences = Vec::new();
    for replica in 0..config.replicas {
        let key = replica_key(spec, replica);
        match run_replica(config, target, spec, &key) {
            Ok(w1) => biases.push(w1),
            Err(Error::Numeric(message)) => {
                divergences.push(DivergenceRecord { cell: key, message });
                biases.push(f64::NAN);
            }
            Err(other) => return Err(other),
        }
    }
    let (value, stderr) = mean_and_se(&biases);
    Ok(CellOutcome { spec: *spec, value, stderr, divergences })
}

pub fn run_bias_sweep(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let out_of_regime = enforce_regime(
        &config.methods,
        &config.stepsizes,
        &config.gammas,
        config.allow_out_of_regime,
    )?;
    let target = SweepTarget::build(&config.target)?;
    // Fail invalid method/noise combinations before spending any budget.
    for &method in &config.methods {
        target.estimator(method, &config.noise)?;
    }

    let specs = cell_grid(config);
    let pool = thread_pool(config.threads)?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| run_cell(config, &target, spec))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut artifacts = RunArtifacts { out_of_regime, ..Default::default() };
    for outcome in &outcomes {
        artifacts.rows.push(ResultRow {
            experiment: EXPERIMENT.into(),
            method: outcome.spec.method.label().into(),
            h: outcome.spec.h,
            gamma: outcome.spec.gamma,
            metric: "w1_bias".into(),
            value: outcome.value,
            stderr: outcome.stderr,
            n: config.n_samples,
            seed: config.seed,
        });
        artifacts.divergences.extend(outcome.divergences.iter().cloned());
    }

    // Log-log slope per (method, gamma) over the cells that stayed finite.
    for &method in &config.methods {
        let gammas: &[f64] = if method.kinetic() { &config.gammas } else { &[0.0] };
        for &gamma in gammas {
            let points: Vec<(f64, f64)> = outcomes
                .iter()
                .filter(|o| o.spec.method == method && o.spec.gamma == gamma)
                .filter(|o| o.value.is_finite() && o.value > 0.0)
                .map(|o| (o.spec.h.ln(), o.value.ln()))
                .collect();
            let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
            let (slope, slope_se) = ols_slope(&xs, &ys).unwrap_or((f64::NAN, f64::NAN));
            artifacts.rows.push(ResultRow {
                experiment: EXPERIMENT.into(),
                method: method.label().into(),
                h: 0.0,
                gamma,
                metric: "w1_slope".into(),
                value: slope,
                stderr: slope_se,
                n: points.len() as u64,
                seed: config.seed,
            });
        }
    }
    Ok(artifacts)
}
