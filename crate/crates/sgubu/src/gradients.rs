//! Unbiased stochastic-gradient estimators and their noise laws: full
//! gradients, with-replacement minibatching, control variates anchored at
//! the mode, and additive noise injection (Gaussian and spike), together
//! with the noise metadata (C_G, sigma_p, covariance summaries) the bound
//! evaluators consume.
//!
//! Estimators are immutable; every chain owns a private RNG stream, so the
//! same estimator value can serve many chains concurrently.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::bounds::{spike_measure, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::model::{LogisticRegressionPotential, Potential, SumPotential};

/// Randomized unbiased estimate of a potential's gradient.
pub trait GradientEstimator: Sync {
    fn dim(&self) -> usize;

    /// The exact gradient the estimator is unbiased for.
    fn mean_gradient_into(&self, x: &[f64], out: &mut [f64]);

    /// One draw of the stochastic gradient.
    fn sample_into(&self, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(x, rng, &mut out);
        out
    }

    /// Bounded variance of the Jacobian error, when known analytically.
    /// None means the constant must be estimated.
    fn c_g(&self) -> Option<f64>;
}

// ---------------------------------------------------------------------------
// Full gradient
// ---------------------------------------------------------------------------

/// Deterministic estimator: always returns the exact gradient.
pub struct FullGradient<'a> {
    pot: &'a dyn Potential,
}

impl<'a> FullGradient<'a> {
    pub fn new(pot: &'a dyn Potential) -> Self {
        Self { pot }
    }
}

impl GradientEstimator for FullGradient<'_> {
    fn dim(&self) -> usize {
        self.pot.dim()
    }

    fn mean_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.pot.gradient_into(x, out);
    }

    fn sample_into(&self, x: &[f64], _rng: &mut dyn RngCore, out: &mut [f64]) {
        self.pot.gradient_into(x, out);
    }

    fn c_g(&self) -> Option<f64> {
        Some(0.0)
    }
}

// ---------------------------------------------------------------------------
// Minibatch
// ---------------------------------------------------------------------------

/// With-replacement minibatch estimator over a sum-structured potential:
/// (K/b) sum_{i in B} grad U_i(x) plus the non-subsampled part. A batch of
/// the full component count short-circuits to the exact sum, which keeps
/// the full-batch draw deterministic.
pub struct MinibatchGradient<'a> {
    pot: &'a dyn SumPotential,
    batch_size: usize,
}

impl<'a> MinibatchGradient<'a> {
    pub fn new(pot: &'a dyn SumPotential, batch_size: usize) -> Result<Self> {
        let k = pot.num_components();
        if batch_size < 1 || batch_size > k {
            return Err(Error::Parameter(format!(
                "batch size must lie in [1, {k}], got {batch_size}"
            )));
        }
        Ok(Self { pot, batch_size })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

impl GradientEstimator for MinibatchGradient<'_> {
    fn dim(&self) -> usize {
        self.pot.dim()
    }

    fn mean_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.pot.gradient_into(x, out);
    }

    fn sample_into(&self, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let k = self.pot.num_components();
        if self.batch_size == k {
            self.pot.gradient_into(x, out);
            return;
        }
        self.pot.base_gradient_into(x, out);
        let scale = k as f64 / self.batch_size as f64;
        let mut scratch = vec![0.0; out.len()];
        for _ in 0..self.batch_size {
            let i = rng.random_range(0..k);
            self.pot.component_gradient_into(i, x, &mut scratch);
            for (o, s) in out.iter_mut().zip(&scratch) {
                *o += scale * s;
            }
        }
    }

    /// Exact when every component is a 1-D quadratic: the Jacobian error is
    /// (K/b) sum_j c_{I_j} - sum_i c_i, whose second moment is
    /// (K^2/b) Var_uniform(c).
    fn c_g(&self) -> Option<f64> {
        let k = self.pot.num_components();
        if self.batch_size == k {
            return Some(0.0);
        }
        let mut curvatures = Vec::with_capacity(k);
        for i in 0..k {
            curvatures.push(self.pot.component_curvature_1d(i)?);
        }
        let mean = curvatures.iter().sum::<f64>() / k as f64;
        let var = curvatures.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / k as f64;
        Some((k * k) as f64 / self.batch_size as f64 * var)
    }
}

// ---------------------------------------------------------------------------
// Control variate
// ---------------------------------------------------------------------------

/// Control-variate estimate for logistic regression with an explicit batch:
/// q/sigma^2 + grad l(q_min) + (N/b) sum_{i in B} (grad l_i(q) - grad l_i(q_min)).
/// `grad_lik_at_min` is the precomputed likelihood gradient sum at q_min.
pub fn control_variate_gradient(
    blr: &LogisticRegressionPotential,
    q: &[f64],
    q_min: &[f64],
    grad_lik_at_min: &[f64],
    batch: &[usize],
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Parameter("control variate batch must be non-empty".into()));
    }
    let d = blr.dim();
    let n = blr.num_components();
    if q.len() != d || q_min.len() != d || grad_lik_at_min.len() != d {
        return Err(Error::Parameter("control variate inputs must match the potential dimension".into()));
    }
    if let Some(i) = batch.iter().find(|i| **i >= n) {
        return Err(Error::Parameter(format!("batch index {i} out of range for {n} observations")));
    }
    let mut out = vec![0.0; d];
    blr.base_gradient_into(q, &mut out);
    for (o, g) in out.iter_mut().zip(grad_lik_at_min) {
        *o += g;
    }
    let scale = n as f64 / batch.len() as f64;
    let mut at_q = vec![0.0; d];
    let mut at_min = vec![0.0; d];
    for &i in batch {
        blr.component_gradient_into(i, q, &mut at_q);
        blr.component_gradient_into(i, q_min, &mut at_min);
        for j in 0..d {
            // Identical code paths make the difference bitwise zero at
            // q = q_min, so the estimator is exactly deterministic there.
            out[j] += scale * (at_q[j] - at_min[j]);
        }
    }
    Ok(out)
}

/// Randomized wrapper around [`control_variate_gradient`] drawing
/// with-replacement batches.
pub struct ControlVariateGradient<'a> {
    blr: &'a LogisticRegressionPotential,
    q_min: Vec<f64>,
    grad_lik_at_min: Vec<f64>,
    batch_size: usize,
}

impl<'a> ControlVariateGradient<'a> {
    pub fn new(blr: &'a LogisticRegressionPotential, q_min: Vec<f64>, batch_size: usize) -> Result<Self> {
        let n = blr.num_components();
        if batch_size < 1 || batch_size > n {
            return Err(Error::Parameter(format!("batch size must lie in [1, {n}], got {batch_size}")));
        }
        if q_min.len() != blr.dim() {
            return Err(Error::Parameter("anchor point must match the potential dimension".into()));
        }
        let d = blr.dim();
        let mut grad_lik_at_min = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        for i in 0..n {
            blr.component_gradient_into(i, &q_min, &mut scratch);
            for (g, s) in grad_lik_at_min.iter_mut().zip(&scratch) {
                *g += s;
            }
        }
        Ok(Self { blr, q_min, grad_lik_at_min, batch_size })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.q_min
    }
}

impl GradientEstimator for ControlVariateGradient<'_> {
    fn dim(&self) -> usize {
        self.blr.dim()
    }

    fn mean_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.blr.gradient_into(x, out);
    }

    fn sample_into(&self, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let n = self.blr.num_components();
        let batch: Vec<usize> = (0..self.batch_size).map(|_| rng.random_range(0..n)).collect();
        let g = control_variate_gradient(self.blr, x, &self.q_min, &self.grad_lik_at_min, &batch)
            .expect("construction validated the inputs");
        out.copy_from_slice(&g);
    }

    fn c_g(&self) -> Option<f64> {
        None
    }
}

// ---------------------------------------------------------------------------
// Additive noise laws
// ---------------------------------------------------------------------------

/// The spike law: mass 1-p at the origin, mass p split uniformly over the
/// 2d signed scaled basis vectors +-s e_i. Mean is exactly zero and the
/// covariance is (p s^2 / d) I_d.
#[derive(Debug, Clone, Copy)]
pub struct SpikeNoiseLaw {
    s: f64,
    d: usize,
    p: f64,
}

impl SpikeNoiseLaw {
    pub fn new(s: f64, d: usize, p: f64) -> Result<Self> {
        if d < 2 || !(s > 0.0) || !s.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "spike law needs d >= 2, s > 0, p in [0, 1], got d={d}, s={s}, p={p}"
            )));
        }
        Ok(Self { s, d, p })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mixture_probability(&self) -> f64 {
        self.p
    }

    /// Per-coordinate covariance p s^2 / d.
    pub fn covariance_scale(&self) -> f64 {
        self.p * self.s * self.s / self.d as f64
    }

    pub fn discrete_measure(&self) -> DiscreteMeasure {
        spike_measure(self.s, self.d, self.p).expect("constructor validated the parameters")
    }

    pub fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        out.fill(0.0);
        let u: f64 = rng.random();
        if u < self.p {
            let i = rng.random_range(0..self.d);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            out[i] = sign * self.s;
        }
    }
}

/// Draws one spike sample: 0 with probability 1-p, otherwise a uniformly
/// signed, uniformly indexed spike of height s.
pub fn sample_spike(s: f64, d: usize, p: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let law = SpikeNoiseLaw::new(s, d, p)?;
    let mut out = vec![0.0; d];
    law.sample_into(rng, &mut out);
    Ok(out)
}

/// Mean-zero additive noise attached to an exact gradient.
#[derive(Debug, Clone, Copy)]
pub enum NoiseLaw {
    Zero,
    /// N(0, c^2 I).
    Gaussian { c: f64 },
    Spike(SpikeNoiseLaw),
}

impl NoiseLaw {
    pub fn gaussian(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Parameter(format!("gaussian noise scale must be nonnegative, got {c}")));
        }
        Ok(Self::Gaussian { c })
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        match self {
            NoiseLaw::Zero => out.fill(0.0),
            NoiseLaw::Gaussian { c } => {
                for o in out.iter_mut() {
                    *o = c * rng.sample::<f64, _>(StandardNormal);
                }
            }
            NoiseLaw::Spike(law) => law.sample_into(rng, out),
        }
    }

    /// tr Cov of one noise draw in dimension d.
    pub fn trace_cov(&self, d: usize) -> f64 {
        match self {
            NoiseLaw::Zero => 0.0,
            NoiseLaw::Gaussian { c } => c * c * d as f64,
            NoiseLaw::Spike(law) => law.p * law.s * law.s,
        }
    }

    /// Largest eigenvalue of the noise covariance in dimension d.
    pub fn lambda_max_cov(&self, _d: usize) -> f64 {
        match self {
            NoiseLaw::Zero => 0.0,
            NoiseLaw::Gaussian { c } => c * c,
            NoiseLaw::Spike(law) => law.covariance_scale(),
        }
    }

    /// sigma_2 = (E||xi||^2)^{1/2} in dimension d.
    pub fn sigma_2(&self, d: usize) -> f64 {
        self.trace_cov(d).sqrt()
    }
}

/// Exact gradient plus i.i.d. additive noise, the regime of the spike
/// experiments. Additive noise leaves the Jacobian of x -> G(x, omega)
/// exact, so C_G = 0.
pub struct NoiseInjectedGradient<'a> {
    pot: &'a dyn Potential,
    law: NoiseLaw,
}

impl<'a> NoiseInjectedGradient<'a> {
    pub fn new(pot: &'a dyn Potential, law: NoiseLaw) -> Result<Self> {
        if let NoiseLaw::Spike(spike) = &law {
            if spike.dim() != pot.dim() {
                return Err(Error::Parameter(format!(
                    "spike law dimension {} does not match potential dimension {}",
                    spike.dim(),
                    pot.dim()
                )));
            }
        }
        Ok(Self { pot, law })
    }

    pub fn law(&self) -> &NoiseLaw {
        &self.law
    }
}

impl GradientEstimator for NoiseInjectedGradient<'_> {
    fn dim(&self) -> usize {
        self.pot.dim()
    }

    fn mean_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.pot.gradient_into(x, out);
    }

    fn sample_into(&self, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        self.pot.gradient_into(x, out);
        let mut noise = vec![0.0; out.len()];
        self.law.sample_into(rng, &mut noise);
        for (o, n) in out.iter_mut().zip(&noise) {
            *o += n;
        }
    }

    fn c_g(&self) -> Option<f64> {
        Some(0.0)
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo metadata estimators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of sigma_p = (E ||G(X, omega) - grad V(X)||^p)^{1/p}
/// with X drawn from the supplied target sampler. The standard error is
/// propagated through the p-th root by the delta method.
pub fn estimate_sigma_p(
    estimator: &dyn GradientEstimator,
    sample_target: &mut dyn FnMut(&mut dyn RngCore) -> Vec<f64>,
    p: u32,
    n_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<MonteCarloEstimate> {
    if !matches!(p, 1 | 2 | 4) {
        return Err(Error::Parameter(format!("sigma_p is tracked for p in {{1, 2, 4}}, got {p}")));
    }
    if n_samples < 100 {
        return Err(Error::Parameter(format!("sigma_p estimation needs at least 100 samples, got {n_samples}")));
    }
    let d = estimator.dim();
    let mut grad = vec![0.0; d];
    let mut draw = vec![0.0; d];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let x = sample_target(rng);
        if x.len() != d {
            return Err(Error::Parameter("target sampler dimension does not match the estimator".into()));
        }
        estimator.mean_gradient_into(&x, &mut grad);
        estimator.sample_into(&x, rng, &mut draw);
        let err_sq: f64 = grad.iter().zip(&draw).map(|(g, s)| (s - g) * (s - g)).sum();
        let term = err_sq.powf(p as f64 / 2.0);
        sum += term;
        sum_sq += term * term;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let se_mean = (var / n).sqrt();
    if mean == 0.0 {
        return Ok(MonteCarloEstimate { estimate: 0.0, std_error: 0.0 });
    }
    let estimate = mean.powf(1.0 / p as f64);
    let std_error = se_mean * estimate / (p as f64 * mean);
    Ok(MonteCarloEstimate { estimate, std_error })
}

/// Monte Carlo estimate of C_G = E ||D_x G(x, omega) - Hess V(x)||_op^2 for
/// minibatched logistic regression (plain or control-variate; both share
/// the Jacobian error (N/b) sum_{i in B} H_i(x) - sum_i H_i(x)).
///
/// The operator norm squared is the top eigenvalue of M^2, found by power
/// iteration with implicit matvecs at O(N d) per application.
pub fn estimate_c_g_logistic(
    blr: &LogisticRegressionPotential,
    batch_size: usize,
    sample_x: &mut dyn FnMut(&mut dyn RngCore) -> Vec<f64>,
    n_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<MonteCarloEstimate> {
    let n_obs = blr.num_components();
    if batch_size < 1 || batch_size > n_obs {
        return Err(Error::Parameter(format!("batch size must lie in [1, {n_obs}], got {batch_size}")));
    }
    if n_samples < 100 {
        return Err(Error::Parameter(format!("C_G estimation needs at least 100 samples, got {n_samples}")));
    }
    let d = blr.dim();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let x = sample_x(rng);
        if x.len() != d {
            return Err(Error::Parameter("x sampler dimension does not match the potential".into()));
        }
        // Sigmoid derivative weights per observation at this x.
        let weights: Vec<f64> = blr
            .features()
            .iter()
            .map(|row| {
                let t: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                let s = if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { let e = t.exp(); e / (1.0 + e) };
                s * (1.0 - s)
            })
            .collect();
        let batch: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n_obs)).collect();
        let scale = n_obs as f64 / batch_size as f64;

        // M v = scale * sum_{i in B} w_i <x_i, v> x_i - sum_i w_i <x_i, v> x_i.
        let apply = |v: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.resize(d, 0.0);
            for (row, w) in blr.features().iter().zip(&weights) {
                let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                for (o, xi) in out.iter_mut().zip(row) {
                    *o -= w * dot * xi;
                }
            }
            for &i in &batch {
                let row = &blr.features()[i];
                let w = weights[i];
                let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                for (o, xi) in out.iter_mut().zip(row) {
                    *o += scale * w * dot * xi;
                }
            }
        };

        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        let mut mv = Vec::with_capacity(d);
        let mut mmv = Vec::with_capacity(d);
        for _ in 0..60 {
            apply(&v, &mut mv);
            apply(&mv, &mut mmv);
            let new_lambda: f64 = v.iter().zip(&mmv).map(|(a, b)| a * b).sum();
            let norm = mmv.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            v.copy_from_slice(&mmv);
            normalize(&mut v);
            if (new_lambda - lambda).abs() <= 1e-9 * new_lambda.abs().max(1e-300) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        let term = lambda.max(0.0);
        sum += term;
        sum_sq += term * term;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(MonteCarloEstimate { estimate: mean, std_error: (var / n).sqrt() })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|t| *t /= norm);
    }
}
