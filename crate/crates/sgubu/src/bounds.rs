//! Closed-form evaluators for the Wasserstein bounds: the three Gaussian
//! convolution bounds (moment, refined tail/truncation, Poincare), the
//! chi-squared/KL chain, the stochastic-gradient bias bound with its three
//! plug-in variants, contraction factors, and the spike lower bound.
//!
//! Every evaluator here is pure arithmetic on supplied statistics.
//! Estimating those statistics from data lives in `gradients` and in
//! [`tail_and_truncated_cov`]; formulas and estimators stay separate.
//! Out-of-regime inputs fail with the named violated constraint instead of
//! extrapolating.

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Constants
// ---------------------------------------------------------------------------

/// c4 = (e^4 - 5)/16, the sharp coefficient in e^t <= 1 + t + c4 t^2 on
/// [-4, 4]. Approximately 3.099884.
pub fn c4() -> f64 {
    (4.0f64.exp() - 5.0) / 16.0
}

/// C_p = (E|Z|^p)^{1/p} for standard normal Z, via the closed form
/// (2^{p/2} Gamma((p+1)/2) / sqrt(pi))^{1/p}.
pub fn gaussian_abs_moment(p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("gaussian_abs_moment needs p >= 1, got {p}")));
    }
    let raw = 2.0f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt();
    Ok(raw.powf(1.0 / p))
}

/// K_p = max(1, C_p/2 + 1/3); equals 1 for every p <= 5.
pub fn k_p(p: f64) -> Result<f64> {
    Ok((gaussian_abs_moment(p)? / 2.0 + 1.0 / 3.0).max(1.0))
}

/// Geometric-series prefactor K_p / (1 - (1 - 2^{-2p})^{1/p}) that collects
/// the per-level coupling costs; 4 for p = 1, about 31.492 for p = 2.
pub fn series_prefactor(p: f64) -> Result<f64> {
    let kp = k_p(p)?;
    let ratio = (1.0 - 2.0f64.powf(-2.0 * p)).powf(1.0 / p);
    Ok(kp / (1.0 - ratio))
}

// ---------------------------------------------------------------------------
// Discrete measures
// ---------------------------------------------------------------------------

/// Finitely supported probability measure with strictly positive weights
/// summing to 1.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Parameter("measure needs equal-length non-empty atoms/weights".into()));
        }
        let d = atoms[0].len();
        if d == 0 || atoms.iter().any(|a| a.len() != d) {
            return Err(Error::Parameter("measure atoms must share a positive dimension".into()));
        }
        if atoms.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("measure atoms must be finite".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Parameter("measure weights must be positive".into()));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("measure weights sum to {mass}, expected 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for (mi, ai) in m.iter_mut().zip(a) {
                *mi += w * ai;
            }
        }
        m
    }

    /// Covariance about the mean, as a dense row-major matrix.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mean = self.mean();
        let mut cov = vec![vec![0.0; d]; d];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for i in 0..d {
                let ci = a[i] - mean[i];
                for j in 0..d {
                    cov[i][j] += w * ci * (a[j] - mean[j]);
                }
            }
        }
        cov
    }

    pub fn cov_frobenius(&self) -> f64 {
        frobenius(&self.covariance())
    }

    pub fn trace_cov(&self) -> f64 {
        self.covariance().iter().enumerate().map(|(i, row)| row[i]).sum()
    }

    /// E||X||^p.
    pub fn norm_moment(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * norm(a).powf(p))
            .sum()
    }

    pub fn max_atom_norm(&self) -> f64 {
        self.atoms.iter().map(|a| norm(a)).fold(0.0, f64::max)
    }

    pub fn is_centered(&self, tol: f64) -> bool {
        self.mean().iter().all(|m| m.abs() <= tol)
    }

    /// The truncated-centered pushforward X 1{||X|| <= 1} - E[X 1{||X|| <= 1}].
    /// Support lands inside the radius-2 ball by construction.
    pub fn truncate_and_center(&self) -> Self {
        let truncated: Vec<Vec<f64>> = self
            .atoms
            .iter()
            .map(|a| if norm(a) <= 1.0 { a.clone() } else { vec![0.0; a.len()] })
            .collect();
        let interim = Self { atoms: truncated, weights: self.weights.clone() };
        let m = interim.mean();
        let atoms = interim
            .atoms
            .into_iter()
            .map(|a| a.iter().zip(&m).map(|(ai, mi)| ai - mi).collect())
            .collect();
        Self { atoms, weights: self.weights.clone() }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn frobenius(mat: &[Vec<f64>]) -> f64 {
    mat.iter().flatten().map(|t| t * t).sum::<f64>().sqrt()
}

/// Spike noise law: mass 1-p at the origin plus mass p spread uniformly
/// over the 2d points +-s e_i. Covariance is (p s^2 / d) I.
pub fn spike_measure(s: f64, d: usize, p: f64) -> Result<DiscreteMeasure> {
    if d == 0 || !(s > 0.0) || !s.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!(
            "spike measure needs d >= 1, s > 0, p in [0, 1], got d={d}, s={s}, p={p}"
        )));
    }
    let mut atoms = Vec::with_capacity(2 * d + 1);
    let mut weights = Vec::with_capacity(2 * d + 1);
    if p < 1.0 {
        atoms.push(vec![0.0; d]);
        weights.push(1.0 - p);
    }
    if p > 0.0 {
        let w = p / (2 * d) as f64;
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut a = vec![0.0; d];
                a[i] = sign * s;
                atoms.push(a);
                weights.push(w);
            }
        }
    }
    DiscreteMeasure::new(atoms, weights)
}

// ---------------------------------------------------------------------------
// Gaussian convolution bounds
// ---------------------------------------------------------------------------

/// Moment form of the convolution bound:
/// W_p(mu * N(0, s I), N(0, s I)) <= s^{-1/2} * prefactor(p) * m_{2p}^{1/p}
/// where m_{2p} = E||X||^{2p} under mu.
pub fn general_convolution_bound(p: f64, moment_2p: f64, s: f64) -> Result<f64> {
    if !(moment_2p >= 0.0) {
        return Err(Error::Parameter(format!("moment_2p must be nonnegative, got {moment_2p}")));
    }
    if !(s > 0.0) {
        return Err(Error::Parameter(format!("scale must be positive, got {s}")));
    }
    Ok(series_prefactor(p)? * moment_2p.powf(1.0 / p) / s.sqrt())
}

/// Refined tail/truncation form:
/// (tau_p + min(1, tau_p)) + sqrt(2 log(1 + c4 ||cov_tilde||_F^2)).
pub fn refined_bound(tau_p: f64, frobenius_truncated: f64) -> Result<f64> {
    if !(tau_p >= 0.0) || !(frobenius_truncated >= 0.0) {
        return Err(Error::Parameter(format!(
            "refined bound needs nonnegative inputs, got tau={tau_p}, frobenius={frobenius_truncated}"
        )));
    }
    let tail_part = tau_p + tau_p.min(1.0);
    let cov_part = (2.0 * (c4() * frobenius_truncated * frobenius_truncated).ln_1p()).sqrt();
    Ok(tail_part + cov_part)
}

/// Tail moments at threshold 1 and the covariance of the truncated-centered
/// variable.
#[derive(Debug, Clone)]
pub struct TruncationSummary {
    /// E ||X|| 1{||X|| > 1}.
    pub tau_1: f64,
    /// (E ||X||^2 1{||X|| > 1})^{1/2}.
    pub tau_2: f64,
    pub truncated_cov: Vec<Vec<f64>>,
    pub cov_frobenius: f64,
}

fn truncation_summary_unchecked(mu: &DiscreteMeasure) -> TruncationSummary {
    let mut tau_1 = 0.0;
    let mut tau_2_sq = 0.0;
    for (a, w) in mu.atoms().iter().zip(mu.weights()) {
        let r = norm(a);
        if r > 1.0 {
            tau_1 += w * r;
            tau_2_sq += w * r * r;
        }
    }
    let truncated = mu.truncate_and_center();
    let cov = truncated.covariance();
    let fro = frobenius(&cov);
    TruncationSummary { tau_1, tau_2: tau_2_sq.sqrt(), truncated_cov: cov, cov_frobenius: fro }
}

/// Tail and truncation statistics of a mean-zero discrete measure.
/// Centering is checked coordinatewise within 1e-8.
pub fn tail_and_truncated_cov(mu: &DiscreteMeasure) -> Result<TruncationSummary> {
    if !mu.is_centered(1e-8) {
        return Err(Error::Parameter(format!(
            "tail statistics need a mean-zero measure, got mean {:?}",
            mu.mean()
        )));
    }
    Ok(truncation_summary_unchecked(mu))
}

/// Sample version of [`tail_and_truncated_cov`]; centering is checked per
/// coordinate within 3 standard errors.
pub fn tail_and_truncated_cov_from_sample(points: &[Vec<f64>]) -> Result<TruncationSummary> {
    if points.len() < 2 {
        return Err(Error::Parameter("sample tail statistics need at least 2 points".into()));
    }
    let n = points.len();
    let w = 1.0 / n as f64;
    let mu = DiscreteMeasure::new(points.to_vec(), vec![w; n])?;
    let mean = mu.mean();
    let cov = mu.covariance();
    for (i, m) in mean.iter().enumerate() {
        let se = (cov[i][i] / n as f64).sqrt();
        if m.abs() > 3.0 * se + 1e-12 {
            return Err(Error::Parameter(format!(
                "sample coordinate {i} has mean {m} with standard error {se}; not centered within 3 SE"
            )));
        }
    }
    Ok(truncation_summary_unchecked(&mu))
}

/// Poincare form: W_2(mu * N(0, I), N(0, I)) <= sqrt(C_P tr Sigma).
pub fn poincare_bound(c_p: f64, trace_sigma: f64) -> Result<f64> {
    if !(c_p >= 0.0) || !(trace_sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "poincare bound needs nonnegative inputs, got C_P={c_p}, trace={trace_sigma}"
        )));
    }
    Ok((c_p * trace_sigma).sqrt())
}

/// Dimension-only corollary of the Poincare form: C_P sqrt(d), using
/// tr Sigma <= C_P d.
pub fn poincare_dimension_bound(c_p: f64, d: usize) -> Result<f64> {
    if !(c_p >= 0.0) {
        return Err(Error::Parameter(format!("poincare bound needs C_P >= 0, got {c_p}")));
    }
    Ok(c_p * (d as f64).sqrt())
}

/// Exact chi-squared divergence of mu * N(0, I) from N(0, I) for a centered
/// discrete mu supported in the radius-2 ball, with its quadratic upper
/// bound.
#[derive(Debug, Clone, Copy)]
pub struct Chi2Convolution {
    /// Exact value: sum_{i,j} w_i w_j exp(<x_i, x_j>) - 1.
    pub chi2: f64,
    /// c4 ||Sigma||_F^2, valid whenever the support radius is at most 2.
    pub quadratic_bound: f64,
}

pub fn chi2_convolution(mu: &DiscreteMeasure) -> Result<Chi2Convolution> {
    if !mu.is_centered(1e-8) {
        return Err(Error::Parameter(format!(
            "chi-squared convolution needs a mean-zero measure, got mean {:?}",
            mu.mean()
        )));
    }
    let radius = mu.max_atom_norm();
    if radius > 2.0 + 1e-12 {
        return Err(Error::Parameter(format!(
            "chi-squared quadratic bound needs support radius <= 2, got {radius}"
        )));
    }
    let mut sum = 0.0;
    for (a, wa) in mu.atoms().iter().zip(mu.weights()) {
        for (b, wb) in mu.atoms().iter().zip(mu.weights()) {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            sum += wa * wb * dot.exp();
        }
    }
    let chi2 = sum - 1.0;
    let fro = mu.cov_frobenius();
    let quadratic_bound = c4() * fro * fro;
    // e^t <= 1 + t + c4 t^2 on [-4, 4] and the mean is zero, so the exact
    // value can only fall below the quadratic bound.
    if chi2 > quadratic_bound * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Invariant(format!(
            "chi-squared {chi2} exceeds its quadratic bound {quadratic_bound}"
        )));
    }
    Ok(Chi2Convolution { chi2, quadratic_bound })
}

/// Moment corollary: (2 + sqrt(2 c4)) E||X||^2 for p = 1, and the same
/// constant times (E||X||^4)^{1/2} for p = 2. Constant is about 4.49 <= 5.
pub fn moment_corollary_bound(p: u32, moment_2: f64, moment_4: f64) -> Result<f64> {
    if !(moment_2 >= 0.0) || !(moment_4 >= 0.0) {
        return Err(Error::Parameter(format!(
            "moment corollary needs nonnegative moments, got m2={moment_2}, m4={moment_4}"
        )));
    }
    let constant = 2.0 + (2.0 * c4()).sqrt();
    match p {
        1 => Ok(constant * moment_2),
        2 => Ok(constant * moment_4.sqrt()),
        _ => Err(Error::Parameter(format!("moment corollary is stated for p in {{1, 2}}, got {p}"))),
    }
}

// ---------------------------------------------------------------------------
// Bias bound and plug-ins
// ---------------------------------------------------------------------------

/// Inputs to the stochastic-gradient bias bound. `t_conv` is the Gaussian
/// convolution term, supplied by one of the [`plug_in_term`] variants or
/// directly; no silent defaulting.
#[derive(Debug, Clone, Copy)]
pub struct BiasBoundInputs {
    pub h: f64,
    pub gamma: f64,
    pub m: f64,
    pub l: f64,
    pub d: usize,
    pub c_g: f64,
    pub sigma_p: f64,
    pub t_conv: f64,
    pub p: u32,
}

/// Checks the friction and stepsize regime shared by the contraction and
/// bias results, naming the violated constraint.
fn check_regime(h: f64, gamma: f64, m: f64, l: f64, c_g: f64) -> Result<()> {
    if !(m > 0.0) || !(l >= m) {
        return Err(Error::Parameter(format!("curvature must satisfy 0 < m <= L, got m={m}, L={l}")));
    }
    if !(c_g >= 0.0) {
        return Err(Error::Parameter(format!("gradient noise constant must satisfy C_G >= 0, got {c_g}")));
    }
    let min_gamma = (8.0 * l).sqrt();
    if !(gamma >= min_gamma) {
        return Err(Error::Parameter(format!(
            "friction violates gamma >= sqrt(8 L): gamma={gamma}, sqrt(8 L)={min_gamma}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("stepsize must be positive, got {h}")));
    }
    let h_friction = 1.0 / (2.0 * gamma);
    if h >= h_friction {
        return Err(Error::Parameter(format!(
            "stepsize violates h < 1/(2 gamma): h={h}, 1/(2 gamma)={h_friction}"
        )));
    }
    if c_g > 0.0 {
        let h_noise = m * l / (20.0 * c_g * gamma);
        if h >= h_noise {
            return Err(Error::Parameter(format!(
                "stepsize violates h < m L/(20 C_G gamma): h={h}, m L/(20 C_G gamma)={h_noise}"
            )));
        }
    }
    Ok(())
}

impl BiasBoundInputs {
    pub fn validate(&self) -> Result<()> {
        check_regime(self.h, self.gamma, self.m, self.l, self.c_g)?;
        if self.p != 1 && self.p != 2 {
            return Err(Error::Parameter(format!("bias bound is stated for p in {{1, 2}}, got {}", self.p)));
        }
        if self.d == 0 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        if !(self.sigma_p >= 0.0) || !(self.t_conv >= 0.0) {
            return Err(Error::Parameter(format!(
                "noise statistics must be nonnegative, got sigma_p={}, t_conv={}",
                self.sigma_p, self.t_conv
            )));
        }
        Ok(())
    }
}

/// Bias of the stochastic-gradient kinetic sampler in the twisted
/// Wasserstein metric:
/// (gamma L h / (m L - 20 h C_G gamma)) *
/// [33 sqrt(d) (sqrt(L) + gamma) + 5 (3 sqrt(C_G d / L) + 3 sigma_p + T)].
pub fn sg_ubu_bias_bound(inputs: &BiasBoundInputs) -> Result<f64> {
    inputs.validate()?;
    let BiasBoundInputs { h, gamma, m, l, d, c_g, sigma_p, t_conv, .. } = *inputs;
    let d = d as f64;
    let denom = m * l - 20.0 * h * c_g * gamma;
    let prefactor = gamma * l * h / denom;
    let bracket = 33.0 * d.sqrt() * (l.sqrt() + gamma)
        + 5.0 * (3.0 * c_g.sqrt() * d.sqrt() / l.sqrt() + 3.0 * sigma_p + t_conv);
    Ok(prefactor * bracket)
}

/// The three printed forms of the convolution term T, one per assumption on
/// the gradient noise.
#[derive(Debug, Clone, Copy)]
pub enum PlugInTerm {
    /// (i) 2p-th moment bound sigma_{2p} on the noise: 126 sigma_{2p}^2 / sqrt(L).
    MomentBound { sigma_2p: f64 },
    /// (ii) Absolutely continuous noise with integrated Poincare mass
    /// v = int C_P(x) tr Cov R(x, .) dpi: 4 sqrt(v) / sqrt(L).
    AbsolutelyContinuous { integrated_poincare_trace: f64 },
    /// (iii) Second moments only: 8 tau_p(Y) / (h^2 sqrt(L))
    /// + 10 e^{-h gamma} sqrt(d) (E lambda_max(Cov R)^2)^{1/2} / sqrt(L).
    SecondMomentOnly { tau_p: f64, lambda_max_sq_mean: f64, h: f64, gamma: f64, d: usize },
}

pub fn plug_in_term(variant: &PlugInTerm, l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::Parameter(format!("plug-in terms need L > 0, got {l}")));
    }
    match *variant {
        PlugInTerm::MomentBound { sigma_2p } => {
            if !(sigma_2p >= 0.0) {
                return Err(Error::Parameter(format!("sigma_2p must be nonnegative, got {sigma_2p}")));
            }
            Ok(126.0 * sigma_2p * sigma_2p / l.sqrt())
        }
        PlugInTerm::AbsolutelyContinuous { integrated_poincare_trace } => {
            if !(integrated_poincare_trace >= 0.0) {
                return Err(Error::Parameter(format!(
                    "integrated Poincare trace must be nonnegative, got {integrated_poincare_trace}"
                )));
            }
            Ok(4.0 * integrated_poincare_trace.sqrt() / l.sqrt())
        }
        PlugInTerm::SecondMomentOnly { tau_p, lambda_max_sq_mean, h, gamma, d } => {
            if !(tau_p >= 0.0) || !(lambda_max_sq_mean >= 0.0) {
                return Err(Error::Parameter(format!(
                    "second-moment plug-in needs nonnegative statistics, got tau={tau_p}, lambda={lambda_max_sq_mean}"
                )));
            }
            if !(h > 0.0) || !(gamma > 0.0) || d == 0 {
                return Err(Error::Parameter(format!(
                    "second-moment plug-in needs h > 0, gamma > 0, d >= 1, got h={h}, gamma={gamma}, d={d}"
                )));
            }
            Ok(8.0 * tau_p / (h * h * l.sqrt())
                + 10.0 * (-h * gamma).exp() * (d as f64).sqrt() * lambda_max_sq_mean.sqrt() / l.sqrt())
        }
    }
}

// ---------------------------------------------------------------------------
// Contraction and spike lower bound
// ---------------------------------------------------------------------------

/// n-step contraction factor (1 - m h/(4 gamma) + 5 h^2 C_G / L)^{n/2} in the
/// twisted norm; C_G = 0 recovers the deterministic-gradient factor.
pub fn contraction_factor(h: f64, gamma: f64, m: f64, l: f64, c_g: f64, n: u64) -> Result<f64> {
    check_regime(h, gamma, m, l, c_g)?;
    let base = 1.0 - m * h / (4.0 * gamma) + 5.0 * h * h * c_g / l;
    // In-regime the noise term is strictly below m h/(4 gamma); anything
    // else indicates an inconsistent caller.
    if base >= 1.0 {
        return Err(Error::Invariant(format!("contraction base {base} is not below 1")));
    }
    Ok(base.powf(n as f64 / 2.0))
}

/// One-dimensional projection lower bound for the spike law at separation s.
#[derive(Debug, Clone, Copy)]
pub struct SpikeLowerBound {
    /// max(0, s/2 - sqrt(2 log d)).
    pub bound: f64,
    /// Whether s >= 4 sqrt(2 log d), where the bound simplifies to >= s/4.
    pub clean_regime: bool,
    /// The clean-regime threshold 4 sqrt(2 log d).
    pub threshold: f64,
}

pub fn spike_lower_bound(s: f64, d: usize) -> Result<SpikeLowerBound> {
    if d < 2 || !(s > 0.0) || !s.is_finite() {
        return Err(Error::Parameter(format!("spike lower bound needs d >= 2 and s > 0, got d={d}, s={s}")));
    }
    let log_term = (2.0 * (d as f64).ln()).sqrt();
    let bound = (s / 2.0 - log_term).max(0.0);
    let threshold = 4.0 * log_term;
    Ok(SpikeLowerBound { bound, clean_regime: s >= threshold, threshold })
}

// ---------------------------------------------------------------------------
// Grouped convolution inputs for reporting
// ---------------------------------------------------------------------------

/// All statistics the convolution bounds consume, gathered once so a report
/// can print every applicable bound side by side.
#[derive(Debug, Clone, Copy)]
pub struct ConvolutionBoundInputs {
    pub p: u32,
    /// E||X||^{2p}.
    pub moment_2p: f64,
    pub scale: f64,
    pub tau_1: f64,
    pub tau_2: f64,
    pub cov_frobenius: f64,
    pub poincare_constant: f64,
    pub trace_cov: f64,
}

impl ConvolutionBoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::Parameter(format!("convolution inputs need p in {{1, 2}}, got {}", self.p)));
        }
        let fields = [
            self.moment_2p,
            self.tau_1,
            self.tau_2,
            self.cov_frobenius,
            self.poincare_constant,
            self.trace_cov,
        ];
        if fields.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::Parameter("convolution inputs must be finite and nonnegative".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Parameter(format!("scale must be positive, got {}", self.scale)));
        }
        // On the tail ||X|| > 1 the square is dominated by the fourth power.
        if self.p == 2 && self.tau_2 * self.tau_2 > self.moment_2p * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!(
                "tau_2^2 = {} exceeds E||X||^4 = {}",
                self.tau_2 * self.tau_2,
                self.moment_2p
            )));
        }
        Ok(())
    }

    pub fn general(&self) -> Result<f64> {
        self.validate()?;
        general_convolution_bound(self.p as f64, self.moment_2p, self.scale)
    }

    pub fn refined(&self) -> Result<f64> {
        self.validate()?;
        let tau = if self.p == 1 { self.tau_1 } else { self.tau_2 };
        refined_bound(tau, self.cov_frobenius)
    }

    pub fn poincare(&self) -> Result<f64> {
        self.validate()?;
        poincare_bound(self.poincare_constant, self.trace_cov)
    }

    pub fn moment_corollary(&self) -> Result<f64> {
        self.validate()?;
        // moment_2p doubles as the corollary input: m2 at p = 1, m4 at p = 2.
        if self.p == 1 {
            moment_corollary_bound(1, self.moment_2p, 0.0)
        } else {
            moment_corollary_bound(2, 0.0, self.moment_2p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{wp_gaussian_mixtures, GaussianMixture1d};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn example_bias_inputs() -> BiasBoundInputs {
        BiasBoundInputs {
            h: 0.01,
            gamma: 32.0f64.sqrt(),
            m: 1.0,
            l: 4.0,
            d: 10,
            c_g: 1.0,
            sigma_p: 2.0,
            t_conv: 1.0,
            p: 2,
        }
    }

    /// Random mean-zero 1-D discrete measure with atoms in [-radius, radius].
    fn random_centered_1d(rng: &mut ChaCha8Rng, max_atoms: usize, radius: f64) -> DiscreteMeasure {
        let k = rng.random_range(2..=max_atoms);
        let mut atoms: Vec<f64> = (0..k).map(|_| rng.random_range(-radius..radius)).collect();
        let weights: Vec<f64> = {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        };
        let mean: f64 = atoms.iter().zip(&weights).map(|(a, w)| a * w).sum();
        // Centering can push an atom slightly past the radius; rescale back.
        atoms.iter_mut().for_each(|a| *a -= mean);
        let max = atoms.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if max > radius {
            let scale = radius / max;
            atoms.iter_mut().for_each(|a| *a *= scale);
        }
        DiscreteMeasure::new(atoms.into_iter().map(|a| vec![a]).collect(), weights).unwrap()
    }

    fn quadrature_wp_to_gaussian(mu: &DiscreteMeasure, p: f64, nodes: usize) -> f64 {
        let atoms: Vec<f64> = mu.atoms().iter().map(|a| a[0]).collect();
        let mix = GaussianMixture1d::convolution_of_atoms(&atoms, mu.weights()).unwrap();
        let std = GaussianMixture1d::standard();
        wp_gaussian_mixtures(&mix, &std, p, nodes).unwrap()
    }

    #[test]
    fn constants_match_closed_forms() {
        assert!((c4() - 3.0998843770715149).abs() < 1e-15);
        // C_1 = sqrt(2/pi), C_2 = 1, C_4 = 3^{1/4}.
        assert!((gaussian_abs_moment(1.0).unwrap() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((gaussian_abs_moment(2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((gaussian_abs_moment(4.0).unwrap() - 3.0f64.powf(0.25)).abs() < 1e-14);
        assert_eq!(k_p(1.0).unwrap(), 1.0);
        assert_eq!(k_p(2.0).unwrap(), 1.0);
        assert!((k_p(6.0).unwrap() - 1.1185422345708432).abs() < 1e-12);
        assert!(gaussian_abs_moment(0.5).is_err());
    }

    #[test]
    fn gaussian_abs_moment_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2001);
        let n = 1_000_000usize;
        for p in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                let t = z.abs().powf(p);
                sum += t;
                sum_sq += t * t;
            }
            let emp = sum / n as f64;
            let var = (sum_sq / n as f64 - emp * emp).max(0.0);
            let se = (var / n as f64).sqrt();
            let exact = gaussian_abs_moment(p).unwrap().powf(p);
            assert!((emp - exact).abs() <= 4.0 * se, "p={p}: {emp} vs {exact}");
        }
    }

    #[test]
    fn series_prefactor_values() {
        assert!((series_prefactor(1.0).unwrap() - 4.0).abs() < 1e-12);
        let p2 = series_prefactor(2.0).unwrap();
        assert!((p2 - 31.491933384829668).abs() < 1e-9);
        assert!(p2 <= 32.0);
        // Both printed p values stay below the collected constant 126.
        for p in [1.0, 2.0] {
            assert!(4.0 * series_prefactor(p).unwrap() <= 126.0);
        }
    }

    #[test]
    fn general_bound_examples() {
        assert_eq!(general_convolution_bound(2.0, 0.0, 1.0).unwrap(), 0.0);
        let b1 = general_convolution_bound(2.0, 3.0, 1.0).unwrap();
        assert!((b1 - 31.491933384829668 * 3.0f64.sqrt()).abs() < 1e-9);
        // Quadrupling the Gaussian scale halves the bound.
        let b4 = general_convolution_bound(2.0, 3.0, 4.0).unwrap();
        assert!((b4 - b1 / 2.0).abs() < 1e-12);
        assert!(general_convolution_bound(0.5, 1.0, 1.0).is_err());
        assert!(general_convolution_bound(2.0, -1.0, 1.0).is_err());
        assert!(general_convolution_bound(2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn refined_bound_examples() {
        assert_eq!(refined_bound(0.0, 0.0).unwrap(), 0.0);
        let v = refined_bound(0.2, 0.5).unwrap();
        assert!((v - 1.4712461321986404).abs() < 1e-12, "refined = {v}");
        // The cruder 2 tau + tail form dominates pointwise.
        for (tau, fro) in [(0.2, 0.5), (1.7, 0.3), (0.0, 2.0)] {
            let refined = refined_bound(tau, fro).unwrap();
            let cruder = 2.0 * tau + (2.0 * (c4() * fro * fro).ln_1p()).sqrt();
            assert!(refined <= cruder + 1e-15);
        }
        assert!(refined_bound(-0.1, 0.0).is_err());
    }

    #[test]
    fn tail_statistics_examples() {
        // Support inside the unit ball: no tail, covariance passes through.
        let inside = DiscreteMeasure::new(vec![vec![0.5], vec![-0.5]], vec![0.5, 0.5]).unwrap();
        let s = tail_and_truncated_cov(&inside).unwrap();
        assert_eq!(s.tau_1, 0.0);
        assert_eq!(s.tau_2, 0.0);
        assert!((s.truncated_cov[0][0] - 0.25).abs() < 1e-15);

        // Two atoms at radius 2: truncation kills both.
        let outside = DiscreteMeasure::new(vec![vec![2.0, 0.0], vec![-2.0, 0.0]], vec![0.5, 0.5]).unwrap();
        let s = tail_and_truncated_cov(&outside).unwrap();
        assert!((s.tau_1 - 2.0).abs() < 1e-15);
        assert!((s.tau_2 - 2.0).abs() < 1e-15);
        assert_eq!(s.cov_frobenius, 0.0);

        // Spike inside the ball: no tail, covariance (s^2/d) I.
        let spike = spike_measure(0.9, 4, 1.0).unwrap();
        let s = tail_and_truncated_cov(&spike).unwrap();
        assert_eq!(s.tau_1, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.81 / 4.0 } else { 0.0 };
                assert!((s.truncated_cov[i][j] - expect).abs() < 1e-15);
            }
        }
        assert!((s.cov_frobenius - 0.81 / 2.0).abs() < 1e-15);

        let off_center = DiscreteMeasure::dirac(vec![0.5]).unwrap();
        assert!(tail_and_truncated_cov(&off_center).is_err());
    }

    #[test]
    fn sample_tail_statistics_check_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2002);
        let centered: Vec<Vec<f64>> = (0..5000)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal) * 0.5])
            .collect();
        let s = tail_and_truncated_cov_from_sample(&centered).unwrap();
        assert!(s.tau_1 > 0.0 && s.tau_2 > 0.0);
        assert!(s.tau_2 * s.tau_2 >= s.tau_1 * s.tau_1 / 2.0);

        let shifted: Vec<Vec<f64>> = centered.iter().map(|x| vec![x[0] + 1.0]).collect();
        assert!(tail_and_truncated_cov_from_sample(&shifted).is_err());
    }

    #[test]
    fn poincare_examples() {
        assert_eq!(poincare_bound(2.0, 0.0).unwrap(), 0.0);
        assert_eq!(poincare_bound(2.0, 8.0).unwrap(), 4.0);
        // Gaussian N(0, c^2 I_d): C_P = c^2, tr = c^2 d, bound c^2 sqrt(d);
        // matches the dimension-only corollary with the same constant.
        let c2 = 0.49;
        let d = 9;
        let full = poincare_bound(c2, c2 * d as f64).unwrap();
        let dim_only = poincare_dimension_bound(c2, d).unwrap();
        assert!((full - c2 * 3.0).abs() < 1e-15);
        assert!((full - dim_only).abs() < 1e-15);
        assert!(poincare_bound(-1.0, 1.0).is_err());
    }

    #[test]
    fn chi2_examples() {
        let dirac = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        let r = chi2_convolution(&dirac).unwrap();
        assert!(r.chi2.abs() < 1e-15);
        assert_eq!(r.quadratic_bound, 0.0);

        // Symmetric pair at unit radius: the four pair terms give
        // (e + e^{-1} + e^{-1} + e)/4 - 1 = cosh(1) - 1.
        let pair = DiscreteMeasure::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.5, 0.5]).unwrap();
        let r = chi2_convolution(&pair).unwrap();
        assert!((r.chi2 - (1.0f64.cosh() - 1.0)).abs() < 1e-14, "chi2 = {}", r.chi2);
        assert!((r.quadratic_bound - c4()).abs() < 1e-14);
        assert!(r.chi2 <= r.quadratic_bound);

        let far = DiscreteMeasure::new(vec![vec![2.5], vec![-2.5]], vec![0.5, 0.5]).unwrap();
        assert!(chi2_convolution(&far).is_err());
        let off = DiscreteMeasure::dirac(vec![1.0]).unwrap();
        assert!(chi2_convolution(&off).is_err());
    }

    #[test]
    fn moment_corollary_examples() {
        assert_eq!(moment_corollary_bound(1, 0.0, 0.0).unwrap(), 0.0);
        let v = moment_corollary_bound(1, 1.0, 0.0).unwrap();
        assert!((v - 4.489933483879244).abs() < 1e-12);
        assert!(v <= 5.0);
        let w = moment_corollary_bound(2, 0.0, 9.0).unwrap();
        assert!((w - 3.0 * 4.489933483879244).abs() < 1e-11);
        assert!(moment_corollary_bound(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn bias_bound_worked_example() {
        let inputs = example_bias_inputs();
        let v = sg_ubu_bias_bound(&inputs).unwrap();
        assert!((v - 67.65828309969164).abs() < 1e-10, "bias bound = {v}");

        // Independent re-derivation with a different association order.
        let d = 10.0f64;
        let gamma = 32.0f64.sqrt();
        let numer_terms = 33.0 * d.sqrt() * 2.0 + 33.0 * d.sqrt() * gamma
            + 15.0 * d.sqrt() / 2.0
            + 15.0 * 2.0
            + 5.0 * 1.0;
        let re_derived = (gamma * 4.0 * 0.01 * numer_terms) / (4.0 - 20.0 * 0.01 * gamma);
        assert!((v - re_derived).abs() <= 1e-12 * v.abs());
    }

    #[test]
    fn bias_bound_deterministic_reduction() {
        let mut inputs = example_bias_inputs();
        inputs.c_g = 0.0;
        inputs.sigma_p = 0.0;
        inputs.t_conv = 0.0;
        let v = sg_ubu_bias_bound(&inputs).unwrap();
        let gamma = 32.0f64.sqrt();
        let expect = gamma * 4.0 * 0.01 / 4.0 * (33.0 * 10.0f64.sqrt() * (2.0 + gamma));
        assert!((v - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn bias_bound_regime_errors_name_constraint() {
        let mut inputs = example_bias_inputs();
        inputs.h = 0.09;
        let err = sg_ubu_bias_bound(&inputs).unwrap_err();
        assert!(err.to_string().contains("1/(2 gamma)"), "{err}");

        let mut inputs = example_bias_inputs();
        inputs.h = 0.04;
        let err = sg_ubu_bias_bound(&inputs).unwrap_err();
        assert!(err.to_string().contains("20 C_G gamma"), "{err}");

        let mut inputs = example_bias_inputs();
        inputs.gamma = 5.0;
        let err = sg_ubu_bias_bound(&inputs).unwrap_err();
        assert!(err.to_string().contains("sqrt(8 L)"), "{err}");
    }

    #[test]
    fn bias_bound_monotone_and_linear_in_small_h() {
        let mut inputs = example_bias_inputs();
        let h_max = (1.0 / (2.0 * inputs.gamma)).min(inputs.m * inputs.l / (20.0 * inputs.c_g * inputs.gamma));
        let mut prev = 0.0;
        for i in 1..=30 {
            inputs.h = h_max * 0.99 * i as f64 / 30.0;
            let v = sg_ubu_bias_bound(&inputs).unwrap();
            assert!(v > prev, "bound must increase in h: {v} after {prev}");
            prev = v;
        }
        inputs.h = 1e-4;
        let small = sg_ubu_bias_bound(&inputs).unwrap();
        inputs.h = 2e-4;
        let doubled = sg_ubu_bias_bound(&inputs).unwrap();
        let ratio = doubled / small;
        assert!((1.9..=2.1).contains(&ratio), "doubling h scaled the bound by {ratio}");
    }

    #[test]
    fn plug_in_examples() {
        assert_eq!(plug_in_term(&PlugInTerm::MomentBound { sigma_2p: 0.0 }, 4.0).unwrap(), 0.0);
        let v = plug_in_term(&PlugInTerm::MomentBound { sigma_2p: 1.0 }, 4.0).unwrap();
        assert!((v - 63.0).abs() < 1e-12);
        let v = plug_in_term(&PlugInTerm::AbsolutelyContinuous { integrated_poincare_trace: 4.0 }, 4.0).unwrap();
        assert!((v - 4.0).abs() < 1e-12);

        // Bounded noise: the tail indicator vanishes, only the spectral
        // term survives.
        let v = plug_in_term(
            &PlugInTerm::SecondMomentOnly { tau_p: 0.0, lambda_max_sq_mean: 4.0, h: 0.01, gamma: 2.0, d: 9 },
            4.0,
        )
        .unwrap();
        let expect = 10.0 * (-0.02f64).exp() * 3.0 * 2.0 / 2.0;
        assert!((v - expect).abs() < 1e-12);
        assert!(plug_in_term(&PlugInTerm::MomentBound { sigma_2p: -1.0 }, 4.0).is_err());
        assert!(plug_in_term(&PlugInTerm::MomentBound { sigma_2p: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn contraction_examples() {
        let gamma = 32.0f64.sqrt();
        assert_eq!(contraction_factor(0.05, gamma, 1.0, 4.0, 0.0, 0).unwrap(), 1.0);
        let v = contraction_factor(0.05, gamma, 1.0, 4.0, 0.0, 2).unwrap();
        assert!((v - 0.9977902913087920).abs() < 1e-14);
        // Gradient noise can only slow contraction.
        let noisy = contraction_factor(0.005, gamma, 1.0, 4.0, 1.0, 10).unwrap();
        let clean = contraction_factor(0.005, gamma, 1.0, 4.0, 0.0, 10).unwrap();
        assert!(noisy >= clean);
        assert!(noisy < 1.0);
        assert!(contraction_factor(0.2, gamma, 1.0, 4.0, 0.0, 2).is_err());
        assert!(contraction_factor(0.05, 3.0, 1.0, 4.0, 0.0, 2).is_err());
    }

    #[test]
    fn spike_lower_bound_examples() {
        // Small separation clamps at zero.
        let small = spike_lower_bound(0.5, 1024).unwrap();
        assert_eq!(small.bound, 0.0);
        assert!(!small.clean_regime);

        let s = 4.0 * (2.0 * 1024.0f64.ln()).sqrt();
        assert!((s - 14.893189644236137).abs() < 1e-12);
        let at_threshold = spike_lower_bound(s, 1024).unwrap();
        assert!(at_threshold.clean_regime);
        assert!((at_threshold.bound - s / 4.0).abs() < 1e-12);
        assert!((at_threshold.bound - 3.7232974110590341).abs() < 1e-12);

        assert!(spike_lower_bound(1.0, 1).is_err());
        assert!(spike_lower_bound(0.0, 4).is_err());
    }

    #[test]
    fn spike_bound_diverges_while_frobenius_stays_one() {
        // Along s = d^{1/4} the covariance Frobenius norm is exactly 1.
        let mu = spike_measure(64.0f64.powf(0.25), 64, 1.0).unwrap();
        assert!((mu.cov_frobenius() - 1.0).abs() < 1e-12);
        let mut prev = -1.0;
        let mut saw_positive = false;
        for exp in [6u32, 10, 16, 24, 32, 40] {
            let d = 2u64.pow(exp);
            let s = (d as f64).powf(0.25);
            let b = spike_lower_bound(s, d as usize).unwrap().bound;
            if b > 0.0 {
                saw_positive = true;
                assert!(b > prev, "bound must grow along s = d^(1/4)");
            }
            prev = b;
        }
        assert!(saw_positive);
    }

    #[test]
    fn spike_measure_structure() {
        let mu = spike_measure(2.0, 3, 0.4).unwrap();
        assert_eq!(mu.atoms().len(), 7);
        assert!(mu.is_centered(1e-15));
        let cov = mu.covariance();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.4 * 4.0 / 3.0 } else { 0.0 };
                assert!((cov[i][j] - expect).abs() < 1e-12);
            }
        }
        assert!(spike_measure(2.0, 0, 0.5).is_err());
        assert!(spike_measure(2.0, 3, 1.5).is_err());
    }

    #[test]
    fn convolution_dominance_on_random_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2003);
        for trial in 0..100 {
            let mu = random_centered_1d(&mut rng, 8, 2.5);
            let stats = tail_and_truncated_cov(&mu).unwrap();
            let m2 = mu.norm_moment(2.0);
            let m4 = mu.norm_moment(4.0);

            let w2 = quadrature_wp_to_gaussian(&mu, 2.0, 1 << 13);
            let general = general_convolution_bound(2.0, m4, 1.0).unwrap();
            let refined = refined_bound(stats.tau_2, stats.cov_frobenius).unwrap();
            let corollary = moment_corollary_bound(2, m2, m4).unwrap();
            assert!(w2 <= general + 1e-6, "trial {trial}: W2 {w2} vs general {general}");
            assert!(w2 <= refined + 1e-6, "trial {trial}: W2 {w2} vs refined {refined}");
            assert!(w2 <= corollary + 1e-6, "trial {trial}: W2 {w2} vs corollary {corollary}");

            let w1 = quadrature_wp_to_gaussian(&mu, 1.0, 1 << 13);
            let general_1 = general_convolution_bound(1.0, m2, 1.0).unwrap();
            let refined_1 = refined_bound(stats.tau_1, stats.cov_frobenius).unwrap();
            let corollary_1 = moment_corollary_bound(1, m2, m4).unwrap();
            assert!(w1 <= general_1 + 1e-6);
            assert!(w1 <= refined_1 + 1e-6);
            assert!(w1 <= corollary_1 + 1e-6);
        }
    }

    #[test]
    fn chi2_kl_chain_dominates_quadrature_w2() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2004);
        for trial in 0..100 {
            // Radius 1 before centering keeps support within radius 2.
            let mu = random_centered_1d(&mut rng, 8, 1.0);
            let r = chi2_convolution(&mu).unwrap();
            let kl_route = (2.0 * r.chi2.ln_1p()).sqrt();
            let w2 = quadrature_wp_to_gaussian(&mu, 2.0, 1 << 13);
            assert!(
                w2 <= kl_route + 1e-6,
                "trial {trial}: W2 {w2} exceeds KL route {kl_route}"
            );
        }
    }

    #[test]
    fn grouped_inputs_validate_and_evaluate() {
        let inputs = ConvolutionBoundInputs {
            p: 2,
            moment_2p: 3.0,
            scale: 1.0,
            tau_1: 0.3,
            tau_2: 0.5,
            cov_frobenius: 0.4,
            poincare_constant: 1.5,
            trace_cov: 2.0,
        };
        assert!(inputs.general().unwrap() > 0.0);
        assert!((inputs.refined().unwrap() - refined_bound(0.5, 0.4).unwrap()).abs() < 1e-15);
        assert!((inputs.poincare().unwrap() - 3.0f64.sqrt()).abs() < 1e-15);
        assert!((inputs.moment_corollary().unwrap() - moment_corollary_bound(2, 0.0, 3.0).unwrap()).abs() < 1e-15);

        let mut bad = inputs;
        bad.tau_2 = 2.0;
        assert!(bad.validate().is_err());
        let mut bad = inputs;
        bad.p = 3;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        /// Exact chi-squared never exceeds its quadratic bound for radius-2
        /// supports in two dimensions.
        #[test]
        fn chi2_quadratic_dominance(
            raw in proptest::collection::vec(((-1.0f64..1.0), (-1.0f64..1.0), (0.05f64..1.0)), 2..8)
        ) {
            let total: f64 = raw.iter().map(|(_, _, w)| w).sum();
            let weights: Vec<f64> = raw.iter().map(|(_, _, w)| w / total).collect();
            let mut atoms: Vec<Vec<f64>> = raw.iter().map(|(a, b, _)| vec![*a, *b]).collect();
            let mut mean = [0.0; 2];
            for (a, w) in atoms.iter().zip(&weights) {
                mean[0] += a[0] * w;
                mean[1] += a[1] * w;
            }
            for a in &mut atoms {
                a[0] -= mean[0];
                a[1] -= mean[1];
            }
            let mu = DiscreteMeasure::new(atoms, weights).unwrap();
            let r = chi2_convolution(&mu).unwrap();
            prop_assert!(r.chi2 <= r.quadratic_bound * (1.0 + 1e-9) + 1e-12);
            prop_assert!(r.chi2 >= -1e-12);
        }

        /// Truncation statistics respect tau_2^2 <= m4 and the Frobenius
        /// norm of the truncated covariance is at most 4 (radius-2 support).
        #[test]
        fn truncation_statistics_are_consistent(
            raw in proptest::collection::vec(((-3.0f64..3.0), (0.05f64..1.0)), 2..8)
        ) {
            let total: f64 = raw.iter().map(|(_, w)| w).sum();
            let weights: Vec<f64> = raw.iter().map(|(_, w)| w / total).collect();
            let mean: f64 = raw.iter().zip(&weights).map(|((a, _), w)| a * w).sum();
            let atoms: Vec<Vec<f64>> = raw.iter().map(|(a, _)| vec![a - mean]).collect();
            let mu = DiscreteMeasure::new(atoms, weights).unwrap();
            let s = tail_and_truncated_cov(&mu).unwrap();
            let m4 = mu.norm_moment(4.0);
            prop_assert!(s.tau_2 * s.tau_2 <= m4 * (1.0 + 1e-9) + 1e-12);
            prop_assert!(s.tau_1 <= s.tau_2 * s.tau_2 + 1e-12 || s.tau_2 <= 1.0 + 1e-12);
            prop_assert!(s.cov_frobenius <= 4.0 + 1e-9);
        }
    }
}
