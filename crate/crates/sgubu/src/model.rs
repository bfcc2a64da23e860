//! Target potentials: quadratics, the two-component quadratic-mixture toy
//! target, and Bayesian logistic regression, together with closed-form
//! moments for the toy target and a gradient-descent mode finder.
//!
//! Conventions: potentials are smooth, strongly convex functions V with
//! invariant target density proportional to exp(-V(x)). Every potential
//! carries its strong-convexity constant `m` and gradient-Lipschitz
//! constant `l` as metadata for the bias bounds and regime checks.

pub mod idx;

use crate::error::{Error, Result};

/// Smooth strongly convex potential with curvature metadata.
pub trait Potential: Sync + Send {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }

    /// Strong convexity constant m (Hessian >= m I).
    fn m(&self) -> f64;

    /// Gradient Lipschitz constant L (Hessian <= L I).
    fn l(&self) -> f64;

    fn condition_number(&self) -> f64 {
        self.l() / self.m()
    }
}

/// Potentials of the form base(x) + sum_i component_i(x), the structure the
/// minibatch and control-variate estimators subsample over.
pub trait SumPotential: Potential {
    fn num_components(&self) -> usize;

    /// Gradient of the i-th subsampled component.
    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// Gradient of the non-subsampled part (zero if there is none).
    fn base_gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    /// Exact scalar curvature of component i, when the component is a 1-D
    /// quadratic. Lets minibatch estimators report an exact Hessian-noise
    /// constant instead of a Monte Carlo one.
    fn component_curvature_1d(&self, _i: usize) -> Option<f64> {
        None
    }
}

// ---------------------------------------------------------------------------
// Quadratics
// ---------------------------------------------------------------------------

/// V(x) = (1/2) sum_i lambda_i (x_i - c_i)^2 with per-coordinate curvatures.
#[derive(Debug, Clone)]
pub struct DiagonalQuadraticPotential {
    center: Vec<f64>,
    curvatures: Vec<f64>,
}

impl DiagonalQuadraticPotential {
    pub fn new(center: Vec<f64>, curvatures: Vec<f64>) -> Result<Self> {
        if center.is_empty() || center.len() != curvatures.len() {
            return Err(Error::Parameter("quadratic needs equal-length non-empty center/curvatures".into()));
        }
        if curvatures.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Parameter("quadratic curvatures must be positive".into()));
        }
        Ok(Self { center, curvatures })
    }

    /// V(x) = ||x||^2 / 2, the standard Gaussian target.
    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    /// Curvatures interpolated linearly between m and l: a d-dimensional
    /// quadratic with prescribed extreme Hessian eigenvalues.
    pub fn with_spectrum_range(dim: usize, m: f64, l: f64) -> Result<Self> {
        if dim == 0 || !(m > 0.0) || !(l >= m) {
            return Err(Error::Parameter(format!(
                "with_spectrum_range needs dim >= 1 and 0 < m <= l, got dim={dim}, m={m}, l={l}"
            )));
        }
        let curv = (0..dim)
            .map(|i| {
                if dim == 1 {
                    m
                } else {
                    m + (l - m) * i as f64 / (dim - 1) as f64
                }
            })
            .collect();
        Self::new(vec![0.0; dim], curv)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl Potential for DiagonalQuadraticPotential {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.center)
            .zip(&self.curvatures)
            .map(|((xi, ci), li)| li * (xi - ci) * (xi - ci))
            .sum::<f64>()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = self.curvatures[i] * (x[i] - self.center[i]);
        }
    }

    fn m(&self) -> f64 {
        self.curvatures.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn l(&self) -> f64 {
        self.curvatures.iter().copied().fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Two-component quadratic mixture (1-D toy target)
// ---------------------------------------------------------------------------

/// One-dimensional potential U(x) = sum_i (x - x_i)^2 / sigma_i^2 (no 1/2
/// factor). The sum of quadratics is again quadratic, so the target is an
/// exact Gaussian whose moments [`toy_target_moments`] returns.
#[derive(Debug, Clone)]
pub struct QuadraticMixturePotential {
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl QuadraticMixturePotential {
    pub fn new(centers: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != widths.len() {
            return Err(Error::Parameter("mixture needs equal-length non-empty centers/widths".into()));
        }
        if widths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Parameter("mixture widths must be positive".into()));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("mixture centers must be finite".into()));
        }
        Ok(Self { centers, widths })
    }

    /// The bimodal-looking but Gaussian toy target: centers (-1, 1), widths
    /// (0.5, 2).
    pub fn toy() -> Self {
        Self::new(vec![-1.0, 1.0], vec![0.5, 2.0]).expect("toy parameters are valid")
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    fn precision_sum(&self) -> f64 {
        self.widths.iter().map(|s| 1.0 / (s * s)).sum()
    }
}

impl Potential for QuadraticMixturePotential {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let t = x[0];
        self.centers
            .iter()
            .zip(&self.widths)
            .map(|(c, s)| (t - c) * (t - c) / (s * s))
            .sum()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let t = x[0];
        out[0] = self
            .centers
            .iter()
            .zip(&self.widths)
            .map(|(c, s)| 2.0 * (t - c) / (s * s))
            .sum();
    }

    // U'' = 2 sum 1/sigma_i^2 everywhere, so m = L.
    fn m(&self) -> f64 {
        2.0 * self.precision_sum()
    }

    fn l(&self) -> f64 {
        2.0 * self.precision_sum()
    }
}

impl SumPotential for QuadraticMixturePotential {
    fn num_components(&self) -> usize {
        self.centers.len()
    }

    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let s = self.widths[i];
        out[0] = 2.0 * (x[0] - self.centers[i]) / (s * s);
    }

    fn component_curvature_1d(&self, i: usize) -> Option<f64> {
        let s = self.widths[i];
        Some(2.0 / (s * s))
    }
}

/// Exact mean and variance of the Gaussian target exp(-U) for a quadratic
/// mixture: completing the square in U(x) = a x^2 - 2 b x + const gives
/// mean b/a and variance 1/(2a) with a = sum 1/sigma_i^2, b = sum
/// x_i/sigma_i^2.
pub fn toy_target_moments(pot: &QuadraticMixturePotential) -> (f64, f64) {
    let a: f64 = pot.precision_sum();
    let b: f64 = pot
        .centers
        .iter()
        .zip(&pot.widths)
        .map(|(c, s)| c / (s * s))
        .sum();
    (b / a, 1.0 / (2.0 * a))
}

// ---------------------------------------------------------------------------
// Bayesian logistic regression
// ---------------------------------------------------------------------------

/// U(q) = ||q||^2 / (2 sigma^2) + sum_i [softplus(x_i.q) - y_i x_i.q] for
/// labels y_i in {0,1}. Strong convexity comes from the Gaussian prior
/// (m = 1/sigma^2); smoothness metadata is L = 1/sigma^2 +
/// lambda_max(X^T X)/4 with the leading eigenvalue from power iteration.
#[derive(Debug, Clone)]
pub struct LogisticRegressionPotential {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    prior_variance: f64,
    l: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Leading eigenvalue of X^T X by power iteration on the implicit operator
/// v -> X^T (X v). Deterministic ramp start; relative tolerance 1e-10.
fn gram_lambda_max(features: &[Vec<f64>]) -> Result<f64> {
    let d = features[0].len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
    v.iter_mut().for_each(|t| *t /= norm);
    let mut lambda = 0.0;
    for iter in 0..2000 {
        let mut w = vec![0.0; d];
        for row in features {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (wi, xi) in w.iter_mut().zip(row) {
                *wi += dot * xi;
            }
        }
        let new_lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        w.iter_mut().for_each(|t| *t /= norm);
        v = w;
        if iter > 0 && (new_lambda - lambda).abs() <= 1e-10 * new_lambda.abs().max(1e-300) {
            return Ok(new_lambda);
        }
        lambda = new_lambda;
    }
    // Power iteration stalls only on near-degenerate leading eigenspaces,
    // where the current Rayleigh quotient is already accurate metadata.
    Ok(lambda)
}

impl LogisticRegressionPotential {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, prior_variance: f64) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Parameter("logistic regression needs equal-length non-empty features/labels".into()));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|r| r.len() != d) {
            return Err(Error::Parameter("logistic regression rows must share a positive dimension".into()));
        }
        if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(Error::Parameter("logistic regression labels must be 0 or 1".into()));
        }
        if !(prior_variance > 0.0) || !prior_variance.is_finite() {
            return Err(Error::Parameter(format!("prior variance must be positive, got {prior_variance}")));
        }
        let l = 1.0 / prior_variance + 0.25 * gram_lambda_max(&features)?;
        Ok(Self { features, labels, prior_variance, l })
    }

    pub fn n_observations(&self) -> usize {
        self.features.len()
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

impl Potential for LogisticRegressionPotential {
    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn value(&self, q: &[f64]) -> f64 {
        let prior: f64 = q.iter().map(|t| t * t).sum::<f64>() / (2.0 * self.prior_variance);
        let lik: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(x, y)| {
                let t: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
                softplus(t) - y * t
            })
            .sum();
        prior + lik
    }

    fn gradient_into(&self, q: &[f64], out: &mut [f64]) {
        for (o, qi) in out.iter_mut().zip(q) {
            *o = qi / self.prior_variance;
        }
        for (x, y) in self.features.iter().zip(&self.labels) {
            let t: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
            let r = sigmoid(t) - y;
            for (o, xi) in out.iter_mut().zip(x) {
                *o += r * xi;
            }
        }
    }

    fn m(&self) -> f64 {
        1.0 / self.prior_variance
    }

    fn l(&self) -> f64 {
        self.l
    }
}

impl SumPotential for LogisticRegressionPotential {
    fn num_components(&self) -> usize {
        self.features.len()
    }

    fn component_gradient_into(&self, i: usize, q: &[f64], out: &mut [f64]) {
        let x = &self.features[i];
        let t: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
        let r = sigmoid(t) - self.labels[i];
        for (o, xi) in out.iter_mut().zip(x) {
            *o = r * xi;
        }
    }

    fn base_gradient_into(&self, q: &[f64], out: &mut [f64]) {
        for (o, qi) in out.iter_mut().zip(q) {
            *o = qi / self.prior_variance;
        }
    }
}

// ---------------------------------------------------------------------------
// Mode finding
// ---------------------------------------------------------------------------

/// Gradient descent with Armijo backtracking (halving) from `x0` until
/// ||grad|| <= tol. Defaults when `None`: tol 1e-8, cap 100_000 iterations.
pub fn find_mode(
    pot: &dyn Potential,
    x0: &[f64],
    tol: Option<f64>,
    max_iters: Option<usize>,
) -> Result<Vec<f64>> {
    let tol = tol.unwrap_or(1e-8);
    let max_iters = max_iters.unwrap_or(100_000);
    if x0.len() != pot.dim() {
        return Err(Error::Parameter(format!(
            "find_mode start has dimension {}, potential has {}",
            x0.len(),
            pot.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("find_mode needs tol > 0, got {tol}")));
    }
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut trial = vec![0.0; x.len()];
    // Armijo slope fraction; trial steps restart from twice the last
    // accepted value but never exceed 1/L, the guaranteed-decrease step.
    // Near the minimum the exact decrease falls below one ulp of the
    // objective, so acceptance allows rounding-level slack.
    let c = 1e-4;
    let step_cap = 1.0 / pot.l().max(1e-12);
    let mut step = step_cap;
    let mut value = pot.value(&x);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iters {
        pot.gradient_into(&x, &mut g);
        let g2: f64 = g.iter().map(|t| t * t).sum();
        grad_norm = g2.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Numeric("find_mode hit a non-finite gradient".into()));
        }
        if grad_norm <= tol {
            return Ok(x);
        }
        let mut t = (step * 2.0).min(step_cap);
        let rounding = 4.0 * f64::EPSILON * value.abs();
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..x.len() {
                trial[i] = x[i] - t * g[i];
            }
            let tv = pot.value(&trial);
            if tv <= value - c * t * g2 + rounding {
                x.copy_from_slice(&trial);
                value = tv;
                step = t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numeric(
                "find_mode line search failed after 60 halvings".into(),
            ));
        }
    }
    Err(Error::NonConvergence { iterations: max_iters, residual: grad_norm })
}
