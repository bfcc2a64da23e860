//! One-step kernels for the kinetic and overdamped samplers.
//!
//! The central integrator is the UBU splitting: an exact half-flight of the
//! free kinetic Langevin dynamics, a full velocity kick at the midpoint, and
//! a second exact half-flight. Both half-flights draw two correlated
//! standard normals per coordinate, so a step costs O(d) with no matrix
//! factorization. The same coefficients feed a closed-form one-step
//! representation and a block-Gaussian noise sampler; tests pin all three to
//! each other.
//!
//! Baselines live here too: the Euler-Maruyama kinetic step (both updates
//! read time-k values) and overdamped SGLD. A deterministic chain driver
//! advances any of them from substreamed ChaCha generators so that
//! synchronously coupled chains can share noise draws while keeping
//! independent gradient batches.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// Position-velocity pair advanced by the kinetic integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl KineticState {
    /// Rejects dimension mismatches and non-finite entries.
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::Parameter(format!(
                "state needs matching dimensions, got x: {}, v: {}",
                x.len(),
                v.len()
            )));
        }
        let state = Self { x, v };
        state.check_finite("construction")?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.x.iter().chain(&self.v).all(|e| e.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite state entries at {context}")))
        }
    }
}

// ---------------------------------------------------------------------------
// Exponential step coefficients
// ---------------------------------------------------------------------------

/// Taylor coefficients of (2u - 2a - a^2)/u^3 at u = 0, where a = 1 - e^{-u}.
/// Exact rationals; the series keeps full precision where the direct form
/// cancels catastrophically.
const SIGMA2_KERNEL: [f64; 12] = [
    2.0 / 3.0,
    -0.5,
    7.0 / 30.0,
    -1.0 / 12.0,
    31.0 / 1260.0,
    -1.0 / 160.0,
    127.0 / 90720.0,
    -17.0 / 60480.0,
    73.0 / 1425600.0,
    -31.0 / 3628800.0,
    2047.0 / 1556755200.0,
    -1.0 / 5322240.0,
];

/// Taylor coefficients of (1 - tanh(y)/y)/y^2 at y = 0, in powers of y^2.
const ONE_MINUS_C_KERNEL: [f64; 7] = [
    1.0 / 3.0,
    -2.0 / 15.0,
    17.0 / 315.0,
    -62.0 / 2835.0,
    1382.0 / 155925.0,
    -21844.0 / 6081075.0,
    929569.0 / 638512875.0,
];

/// Below this value of the scaled argument the direct formulas lose digits
/// to cancellation and the series branches take over. Both branches agree to
/// about 1e-13 relative at the boundary.
const SERIES_SWITCH: f64 = 0.05;

/// Velocity decay weight E(t) = e^{-gamma t}.
fn decay(gamma: f64, t: f64) -> f64 {
    (-gamma * t).exp()
}

/// Flight weight F(t) = (1 - e^{-gamma t})/gamma, stable for small gamma t.
fn flight(gamma: f64, t: f64) -> f64 {
    -(-gamma * t).exp_m1() / gamma
}

/// Position noise variance sigma(h, gamma)^2 = (2u - 2a - a^2)/gamma^2 with
/// u = gamma h and a = 1 - e^{-u}. The direct form loses roughly 3 log10(1/u)
/// digits, so small u switches to the series in [`SIGMA2_KERNEL`].
fn sigma_sq(gamma: f64, h: f64) -> f64 {
    let u = gamma * h;
    if u < SERIES_SWITCH {
        let mut kernel = 0.0;
        for c in SIGMA2_KERNEL.iter().rev() {
            kernel = kernel * u + c;
        }
        // u^3 P(u) / gamma^2 = gamma h^3 P(u)
        gamma * h * h * h * kernel
    } else {
        let a = -(-u).exp_m1();
        (2.0 * u - 2.0 * a - a * a) / (gamma * gamma)
    }
}

/// 1 - tanh(y)/y, the complement of the noise correlation c in the exact
/// flight map. Series below the switch, direct above.
fn one_minus_c(y: f64) -> f64 {
    if y < SERIES_SWITCH {
        let y2 = y * y;
        let mut kernel = 0.0;
        for c in ONE_MINUS_C_KERNEL.iter().rev() {
            kernel = kernel * y2 + c;
        }
        y2 * kernel
    } else {
        1.0 - y.tanh() / y
    }
}

/// Square root with the documented tolerance for rounding: values in
/// [-1e-12, 0) clamp to zero, anything lower is a numeric error.
fn checked_sqrt(value: f64, what: &str) -> Result<f64> {
    if value >= 0.0 {
        Ok(value.sqrt())
    } else if value >= -1e-12 {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("negative radicand {value:e} in {what}")))
    }
}

/// Weights of the exact free-flight map over time `t`: the state update
///
/// ```text
/// x' = x + F(t) v + sqrt(2/gamma) (Z1 - Z2)
/// v' = eta v + sqrt(2 gamma) Z2
/// ```
///
/// with Z1 = sqrt(t) xi1 and Z2 = z2_scale (sqrt(c) xi1 + sqrt(1-c) xi2)
/// built from two independent standard normals per coordinate. The mixing
/// weight c = tanh(gamma t / 2)/(gamma t / 2) makes the Gaussian law of
/// (x', v') exactly match the continuous dynamics.
#[derive(Debug, Clone, Copy)]
pub struct UCoeffs {
    pub t: f64,
    pub gamma: f64,
    /// e^{-gamma t}.
    pub eta: f64,
    /// (1 - e^{-gamma t})/gamma.
    pub f: f64,
    /// sqrt(t), the scale of Z1.
    pub z1_scale: f64,
    /// sqrt((1 - eta^2)/(2 gamma)), the scale of Z2.
    pub z2_scale: f64,
    pub sqrt_c: f64,
    pub sqrt_one_minus_c: f64,
    /// sqrt(2/gamma).
    pub pos_noise: f64,
    /// sqrt(2 gamma).
    pub vel_noise: f64,
}

impl UCoeffs {
    pub fn new(t: f64, gamma: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Parameter(format!("flight time must be positive and finite, got {t}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Parameter(format!("friction must be positive and finite, got {gamma}")));
        }
        let eta = decay(gamma, t);
        let z2_sq = -(-2.0 * gamma * t).exp_m1() / (2.0 * gamma);
        let omc = one_minus_c(gamma * t / 2.0);
        Ok(Self {
            t,
            gamma,
            eta,
            f: flight(gamma, t),
            z1_scale: t.sqrt(),
            z2_scale: checked_sqrt(z2_sq, "flight noise scale")?,
            sqrt_c: checked_sqrt(1.0 - omc, "flight noise mixing weight")?,
            sqrt_one_minus_c: checked_sqrt(omc, "flight noise mixing complement")?,
            pos_noise: (2.0 / gamma).sqrt(),
            vel_noise: (2.0 * gamma).sqrt(),
        })
    }
}

/// All exponential weights one full step needs, precomputed once per chain.
#[derive(Debug, Clone, Copy)]
pub struct StepCoefficients {
    pub h: f64,
    pub gamma: f64,
    /// e^{-gamma h/2}, the half-step velocity decay.
    pub eta: f64,
    /// E(h) = e^{-gamma h}.
    pub e_full: f64,
    /// F(h).
    pub f_full: f64,
    /// F(h/2).
    pub f_half: f64,
    /// sigma(h, gamma)^2, the one-step position noise variance.
    pub sigma2: f64,
    /// Flight weights for one half step (t = h/2).
    pub half: UCoeffs,
}

impl StepCoefficients {
    pub fn new(h: f64, gamma: f64) -> Result<Self> {
        let half = UCoeffs::new(h / 2.0, gamma)?;
        let sigma2 = sigma_sq(gamma, h);
        // sigma2 is nonnegative by construction; the guard documents the
        // contract for any future refactor of the kernels.
        checked_sqrt(sigma2, "one-step position noise variance")?;
        Ok(Self {
            h,
            gamma,
            eta: half.eta,
            e_full: decay(gamma, h),
            f_full: flight(gamma, h),
            f_half: half.f,
            sigma2: sigma2.max(0.0),
            half,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Splitting maps
// ---------------------------------------------------------------------------

pub(crate) fn fill_standard_normal(rng: &mut dyn RngCore, out: &mut [f64]) {
    for o in out {
        *o = rng.sample::<f64, _>(StandardNormal);
    }
}

/// Applies the exact free-flight map in place. `xi1` and `xi2` are
/// independent standard normal draws, one pair per coordinate.
pub fn u_map_with_draws(x: &mut [f64], v: &mut [f64], co: &UCoeffs, xi1: &[f64], xi2: &[f64]) {
    assert_eq!(x.len(), v.len(), "state dimensions must match");
    assert_eq!(x.len(), xi1.len(), "xi1 length must match the state");
    assert_eq!(x.len(), xi2.len(), "xi2 length must match the state");
    for i in 0..x.len() {
        let z1 = co.z1_scale * xi1[i];
        let z2 = co.z2_scale * (co.sqrt_c * xi1[i] + co.sqrt_one_minus_c * xi2[i]);
        let xn = x[i] + co.f * v[i] + co.pos_noise * (z1 - z2);
        let vn = co.eta * v[i] + co.vel_noise * z2;
        x[i] = xn;
        v[i] = vn;
    }
}

/// Free flight over h/2 with externally supplied draws. Zero draws give the
/// deterministic damped drift.
pub fn u_half_step_with_draws(
    state: &KineticState,
    h: f64,
    gamma: f64,
    xi1: &[f64],
    xi2: &[f64],
) -> Result<KineticState> {
    if xi1.len() != state.dim() || xi2.len() != state.dim() {
        return Err(Error::Parameter("draw length must match the state dimension".into()));
    }
    let co = UCoeffs::new(h / 2.0, gamma)?;
    let mut x = state.x.clone();
    let mut v = state.v.clone();
    u_map_with_draws(&mut x, &mut v, &co, xi1, xi2);
    KineticState::new(x, v)
}

/// Free flight over h/2 with fresh standard normal draws.
pub fn u_half_step(state: &KineticState, h: f64, gamma: f64, rng: &mut dyn RngCore) -> Result<KineticState> {
    let mut xi1 = vec![0.0; state.dim()];
    let mut xi2 = vec![0.0; state.dim()];
    fill_standard_normal(rng, &mut xi1);
    fill_standard_normal(rng, &mut xi2);
    u_half_step_with_draws(state, h, gamma, &xi1, &xi2)
}

/// Velocity kick v <- v - h grad; the position is untouched.
pub fn b_step(state: &KineticState, h: f64, grad: &[f64]) -> Result<KineticState> {
    if grad.len() != state.dim() {
        return Err(Error::Parameter("gradient length must match the state dimension".into()));
    }
    let v = state.v.iter().zip(grad).map(|(vi, gi)| vi - h * gi).collect();
    KineticState::new(state.x.clone(), v)
}

/// The four standard normal vectors one full UBU step consumes, in the order
/// the chain driver draws them: first-half xi1, first-half xi2, second-half
/// xi1, second-half xi2.
#[derive(Debug, Clone)]
pub struct UbuDraws {
    pub xi1_first: Vec<f64>,
    pub xi2_first: Vec<f64>,
    pub xi1_second: Vec<f64>,
    pub xi2_second: Vec<f64>,
}

impl UbuDraws {
    pub fn zeros(dim: usize) -> Self {
        Self {
            xi1_first: vec![0.0; dim],
            xi2_first: vec![0.0; dim],
            xi1_second: vec![0.0; dim],
            xi2_second: vec![0.0; dim],
        }
    }

    pub fn sample(dim: usize, rng: &mut dyn RngCore) -> Self {
        let mut draws = Self::zeros(dim);
        fill_standard_normal(rng, &mut draws.xi1_first);
        fill_standard_normal(rng, &mut draws.xi2_first);
        fill_standard_normal(rng, &mut draws.xi1_second);
        fill_standard_normal(rng, &mut draws.xi2_second);
        draws
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = self.xi1_first.len() == dim
            && self.xi2_first.len() == dim
            && self.xi1_second.len() == dim
            && self.xi2_second.len() == dim;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter("draw lengths must match the state dimension".into()))
        }
    }
}

/// One UBU step with externally supplied draws: half flight, kick with the
/// gradient at the midpoint, half flight. `grad_fn` fills the gradient (or a
/// stochastic estimate of it) at the position it is handed.
pub fn ubu_step_with_draws(
    state: &KineticState,
    coeffs: &StepCoefficients,
    grad_fn: &mut dyn FnMut(&[f64], &mut [f64]),
    draws: &UbuDraws,
) -> Result<KineticState> {
    draws.check_dim(state.dim())?;
    let mut x = state.x.clone();
    let mut v = state.v.clone();
    let mut g = vec![0.0; state.dim()];
    u_map_with_draws(&mut x, &mut v, &coeffs.half, &draws.xi1_first, &draws.xi2_first);
    grad_fn(&x, &mut g);
    for i in 0..v.len() {
        v[i] -= coeffs.h * g[i];
    }
    u_map_with_draws(&mut x, &mut v, &coeffs.half, &draws.xi1_second, &draws.xi2_second);
    KineticState::new(x, v)
}

/// One UBU step with fresh draws.
pub fn ubu_step(
    state: &KineticState,
    coeffs: &StepCoefficients,
    grad_fn: &mut dyn FnMut(&[f64], &mut [f64]),
    rng: &mut dyn RngCore,
) -> Result<KineticState> {
    let draws = UbuDraws::sample(state.dim(), rng);
    ubu_step_with_draws(state, coeffs, grad_fn, &draws)
}

/// The closed-form one-step representation of the same update:
///
/// ```text
/// y  = x + F(h/2) v + n_y
/// v' = E(h) v - h E(h/2) grad(y) + n_v
/// x' = x + F(h) v - h F(h/2) grad(y) + n_x
/// ```
///
/// with the noise vectors assembled from the identical four draws the
/// splitting consumes. Agrees with [`ubu_step_with_draws`] to rounding;
/// the test suite pins the two paths to 1e-12.
pub fn ubu_closed_form(
    state: &KineticState,
    coeffs: &StepCoefficients,
    grad_fn: &mut dyn FnMut(&[f64], &mut [f64]),
    draws: &UbuDraws,
) -> Result<KineticState> {
    draws.check_dim(state.dim())?;
    let co = &coeffs.half;
    let d = state.dim();

    let z2 = |xi1: f64, xi2: f64| co.z2_scale * (co.sqrt_c * xi1 + co.sqrt_one_minus_c * xi2);

    let mut y = vec![0.0; d];
    for i in 0..d {
        let z1a = co.z1_scale * draws.xi1_first[i];
        let z2a = z2(draws.xi1_first[i], draws.xi2_first[i]);
        y[i] = state.x[i] + coeffs.f_half * state.v[i] + co.pos_noise * (z1a - z2a);
    }
    let mut g = vec![0.0; d];
    grad_fn(&y, &mut g);

    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    for i in 0..d {
        let z1a = co.z1_scale * draws.xi1_first[i];
        let z2a = z2(draws.xi1_first[i], draws.xi2_first[i]);
        let z1b = co.z1_scale * draws.xi1_second[i];
        let z2b = z2(draws.xi1_second[i], draws.xi2_second[i]);
        v[i] = coeffs.e_full * state.v[i] - coeffs.h * coeffs.eta * g[i] + co.vel_noise * (coeffs.eta * z2a + z2b);
        x[i] = state.x[i] + coeffs.f_full * state.v[i] - coeffs.h * coeffs.f_half * g[i]
            + co.pos_noise * (z1a - z2a + z1b - z2b)
            + coeffs.f_half * co.vel_noise * z2a;
    }
    KineticState::new(x, v)
}

// ---------------------------------------------------------------------------
// Baseline one-step kernels
// ---------------------------------------------------------------------------

/// Euler-Maruyama kinetic step with an externally supplied gradient (already
/// evaluated at `state.x`) and noise draw. Both updates read time-k values:
///
/// ```text
/// x' = x + h v
/// v' = v - h grad - h gamma v + sqrt(2 gamma h) xi
/// ```
pub fn em_kinetic_step_with_draw(
    state: &KineticState,
    h: f64,
    gamma: f64,
    grad: &[f64],
    xi: &[f64],
) -> Result<KineticState> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("stepsize must be positive and finite, got {h}")));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!("friction must be nonnegative and finite, got {gamma}")));
    }
    if grad.len() != state.dim() || xi.len() != state.dim() {
        return Err(Error::Parameter("gradient and draw lengths must match the state dimension".into()));
    }
    let noise = (2.0 * gamma * h).sqrt();
    let d = state.dim();
    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    for i in 0..d {
        x[i] = state.x[i] + h * state.v[i];
        v[i] = state.v[i] - h * grad[i] - h * gamma * state.v[i] + noise * xi[i];
    }
    KineticState::new(x, v)
}

/// Euler-Maruyama kinetic step; evaluates `grad_fn` at the current position
/// and draws fresh noise.
pub fn em_kinetic_step(
    state: &KineticState,
    h: f64,
    gamma: f64,
    grad_fn: &mut dyn FnMut(&[f64], &mut [f64]),
    rng: &mut dyn RngCore,
) -> Result<KineticState> {
    let mut g = vec![0.0; state.dim()];
    let mut xi = vec![0.0; state.dim()];
    grad_fn(&state.x, &mut g);
    fill_standard_normal(rng, &mut xi);
    em_kinetic_step_with_draw(state, h, gamma, &g, &xi)
}

/// Overdamped step x - h grad + sqrt(2h) xi with supplied gradient and draw.
pub fn sgld_step_with_draw(x: &[f64], h: f64, grad: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("stepsize must be positive and finite, got {h}")));
    }
    if grad.len() != x.len() || xi.len() != x.len() {
        return Err(Error::Parameter("gradient and draw lengths must match the state dimension".into()));
    }
    let noise = (2.0 * h).sqrt();
    Ok((0..x.len()).map(|i| x[i] - h * grad[i] + noise * xi[i]).collect())
}

/// Overdamped step with a gradient evaluation and fresh noise.
pub fn sgld_step(
    x: &[f64],
    h: f64,
    grad_fn: &mut dyn FnMut(&[f64], &mut [f64]),
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut xi = vec![0.0; x.len()];
    grad_fn(x, &mut g);
    fill_standard_normal(rng, &mut xi);
    sgld_step_with_draw(x, h, &g, &xi)
}

// ---------------------------------------------------------------------------
// Block-Gaussian noise sampler
// ---------------------------------------------------------------------------

/// Samples the centred 2d-dimensional Gaussian with block covariance
///
/// ```text
/// [ I        F(h) I ]
/// [ F(h) I   (F(h)^2 + sigma^2) I ]
/// ```
///
/// via its lower-triangular factor: X1 = Z, X2 = F(h) Z + sigma Zhat.
pub fn block_gaussian_sample(
    coeffs: &StepCoefficients,
    d: usize,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if d == 0 {
        return Err(Error::Parameter("block sample needs a positive dimension".into()));
    }
    let sigma = checked_sqrt(coeffs.sigma2, "block sample noise variance")?;
    let mut x1 = vec![0.0; d];
    let mut zhat = vec![0.0; d];
    fill_standard_normal(rng, &mut x1);
    fill_standard_normal(rng, &mut zhat);
    let x2 = (0..d).map(|i| coeffs.f_full * x1[i] + sigma * zhat[i]).collect();
    Ok((x1, x2))
}

// ---------------------------------------------------------------------------
// Substreamed chain RNGs
// ---------------------------------------------------------------------------

/// Derives an independent ChaCha substream from a master seed, a cell key
/// naming the experiment cell, and a role within the cell. Both strings are
/// length-prefixed before hashing so distinct (key, role) pairs can never
/// collide by concatenation.
pub fn derive_rng(master_seed: u64, cell_key: &str, role: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((cell_key.len() as u64).to_le_bytes());
    hasher.update(cell_key.as_bytes());
    hasher.update((role.len() as u64).to_le_bytes());
    hasher.update(role.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// The three substreams one chain consumes. Keeping the two noise streams
/// separate from the gradient stream lets synchronously coupled chains share
/// every noise draw while drawing independent minibatches.
pub struct ChainRngs {
    pub grad: ChaCha8Rng,
    pub noise1: ChaCha8Rng,
    pub noise2: ChaCha8Rng,
}

impl ChainRngs {
    pub fn new(master_seed: u64, cell_key: &str) -> Self {
        Self {
            grad: derive_rng(master_seed, cell_key, "grad"),
            noise1: derive_rng(master_seed, cell_key, "noise1"),
            noise2: derive_rng(master_seed, cell_key, "noise2"),
        }
    }

    /// Substreams for a partner chain coupled to `cell_key`: identical noise
    /// streams, an independent gradient stream.
    pub fn coupled_partner(master_seed: u64, cell_key: &str) -> Self {
        Self {
            grad: derive_rng(master_seed, cell_key, "grad-partner"),
            noise1: derive_rng(master_seed, cell_key, "noise1"),
            noise2: derive_rng(master_seed, cell_key, "noise2"),
        }
    }
}

// ---------------------------------------------------------------------------
// Chain driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorKind {
    Ubu,
    EmKinetic,
    Sgld,
}

#[derive(Debug, Clone, Copy)]
pub struct ChainParams {
    pub h: f64,
    /// Friction; ignored by [`IntegratorKind::Sgld`].
    pub gamma: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainParams {
    fn validate(&self, kind: IntegratorKind) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Parameter(format!("stepsize must be positive and finite, got {}", self.h)));
        }
        if self.thin == 0 {
            return Err(Error::Parameter("thinning stride must be at least 1".into()));
        }
        if self.burn_in > self.n_steps {
            return Err(Error::Parameter(format!(
                "burn-in {} exceeds the total step count {}",
                self.burn_in, self.n_steps
            )));
        }
        match kind {
            IntegratorKind::Ubu if !(self.gamma > 0.0) => {
                Err(Error::Parameter(format!("friction must be positive, got {}", self.gamma)))
            }
            IntegratorKind::EmKinetic if !(self.gamma >= 0.0) || !self.gamma.is_finite() => {
                Err(Error::Parameter(format!("friction must be nonnegative, got {}", self.gamma)))
            }
            _ => Ok(()),
        }
    }
}

/// Gradient callback for the chain drivers: fills the output slice with the
/// (possibly stochastic) gradient at the given position, drawing any batch
/// indices from the supplied stream.
pub type GradientFn<'a> = dyn FnMut(&[f64], &mut dyn RngCore, &mut [f64]) + 'a;

/// Sample callback for [`run_chain_with`]: receives `(step, x, v)` for every
/// retained state.
pub type SampleSink<'a> = dyn FnMut(usize, &[f64], &[f64]) + 'a;

/// Advances one chain and hands every retained sample to `sink` as
/// `(step, x, v)` with `step` counting executed steps from 1. A step is
/// retained once past burn-in at the thinning stride, so the sink sees
/// (n_steps - burn_in)/thin samples. The gradient closure receives the
/// gradient substream; noise comes from the two noise substreams. Any
/// non-finite state aborts with the offending step index.
///
/// The overdamped kind advances positions only; its sink sees the initial
/// velocities unchanged.
pub fn run_chain_with(
    kind: IntegratorKind,
    params: &ChainParams,
    initial: &KineticState,
    grad_fn: &mut GradientFn,
    rngs: &mut ChainRngs,
    sink: &mut SampleSink,
) -> Result<()> {
    params.validate(kind)?;
    initial.check_finite("chain start")?;
    let d = initial.dim();
    let mut x = initial.x.clone();
    let mut v = initial.v.clone();
    let mut g = vec![0.0; d];
    let mut xi1 = vec![0.0; d];
    let mut xi2 = vec![0.0; d];

    let coeffs = match kind {
        IntegratorKind::Ubu => Some(StepCoefficients::new(params.h, params.gamma)?),
        _ => None,
    };
    let em_noise = (2.0 * params.gamma * params.h).sqrt();
    let sgld_noise = (2.0 * params.h).sqrt();

    for step in 1..=params.n_steps {
        match kind {
            IntegratorKind::Ubu => {
                let co = &coeffs.as_ref().unwrap().half;
                fill_standard_normal(&mut rngs.noise1, &mut xi1);
                fill_standard_normal(&mut rngs.noise2, &mut xi2);
                u_map_with_draws(&mut x, &mut v, co, &xi1, &xi2);
                grad_fn(&x, &mut rngs.grad, &mut g);
                for i in 0..d {
                    v[i] -= params.h * g[i];
                }
                fill_standard_normal(&mut rngs.noise1, &mut xi1);
                fill_standard_normal(&mut rngs.noise2, &mut xi2);
                u_map_with_draws(&mut x, &mut v, co, &xi1, &xi2);
            }
            IntegratorKind::EmKinetic => {
                grad_fn(&x, &mut rngs.grad, &mut g);
                fill_standard_normal(&mut rngs.noise1, &mut xi1);
                for i in 0..d {
                    let xn = x[i] + params.h * v[i];
                    v[i] = v[i] - params.h * g[i] - params.h * params.gamma * v[i] + em_noise * xi1[i];
                    x[i] = xn;
                }
            }
            IntegratorKind::Sgld => {
                grad_fn(&x, &mut rngs.grad, &mut g);
                fill_standard_normal(&mut rngs.noise1, &mut xi1);
                for i in 0..d {
                    x[i] = x[i] - params.h * g[i] + sgld_noise * xi1[i];
                }
            }
        }
        let finite = match kind {
            IntegratorKind::Sgld => x.iter().all(|e| e.is_finite()),
            _ => x.iter().chain(v.iter()).all(|e| e.is_finite()),
        };
        if !finite {
            return Err(Error::Numeric(format!(
                "chain diverged: non-finite state after step {step} of {} ({kind:?}, h = {})",
                params.n_steps, params.h
            )));
        }
        if step > params.burn_in && (step - params.burn_in).is_multiple_of(params.thin) {
            sink(step, &x, &v);
        }
    }
    Ok(())
}

/// [`run_chain_with`] collecting the retained positions.
pub fn run_chain(
    kind: IntegratorKind,
    params: &ChainParams,
    initial: &KineticState,
    grad_fn: &mut GradientFn,
    rngs: &mut ChainRngs,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    run_chain_with(kind, params, initial, grad_fn, rngs, &mut |_, x, _| {
        out.push(x.to_vec());
    })?;
    Ok(out)
}
