//! One-dimensional Wasserstein distances, Gaussian-mixture quantiles,
//! twisted phase-space norms, and the sparse max-coordinate statistics.
//!
//! Three independent W_p routes are kept deliberately separate so they can
//! cross-check each other:
//!
//! * [`w1_sorted`] / [`w2_sorted`]: order-statistic coupling between two
//!   equal-size empirical samples (monotone rearrangement is optimal in 1-D);
//! * [`wp_quantile_1d`]: midpoint quadrature of |F_P^{-1} - F_Q^{-1}|^p over
//!   (0,1), for measures given through quantile functions;
//! * [`exact_wp_small`]: exact optimal transport between small weighted atom
//!   sets via successive-shortest-path min-cost flow (any dimension).

use crate::error::{Error, Result};

/// Default node count for quantile quadrature. Midpoint quadrature at this
/// resolution keeps the relative error of smooth-quantile integrands below
/// 1e-6 and is exact for staircase quantiles aligned with the grid.
pub const DEFAULT_QUADRATURE_NODES: usize = 1 << 16;

pub mod normal {
    //! Standard normal cdf/pdf/quantile helpers shared across the crate.

    use statrs::function::erf::{erfc, erfc_inv};

    const SQRT_2: f64 = std::f64::consts::SQRT_2;
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    /// Standard normal density.
    pub fn pdf(x: f64) -> f64 {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    }

    /// Standard normal cdf, accurate in both tails (erfc-based).
    pub fn cdf(x: f64) -> f64 {
        0.5 * erfc(-x / SQRT_2)
    }

    /// Standard normal quantile: erfc_inv seed polished by two Newton steps
    /// against the erfc-accurate cdf.
    pub fn quantile(u: f64) -> f64 {
        assert!(u > 0.0 && u < 1.0, "quantile needs u in (0,1)");
        let mut x = if u < 0.5 {
            -SQRT_2 * erfc_inv(2.0 * u)
        } else {
            SQRT_2 * erfc_inv(2.0 * (1.0 - u))
        };
        for _ in 0..2 {
            let d = pdf(x);
            if d < 1e-300 {
                break;
            }
            x -= (cdf(x) - u) / d;
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Sorted empirical samples
// ---------------------------------------------------------------------------

/// Non-empty sample of finite values held in ascending order.
#[derive(Debug, Clone)]
pub struct SortedSample {
    values: Vec<f64>,
}

impl SortedSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("SortedSample needs at least one value".into()));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("SortedSample got non-finite value {bad}")));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Empirical quantile: the ceil(u*n)-th order statistic.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.values.len();
        let idx = (u * n as f64).ceil() as usize;
        self.values[idx.clamp(1, n) - 1]
    }
}

/// Order-statistic W_1 between two equal-size samples: mean |X_(i) - Y_(i)|.
pub fn w1_sorted(a: &SortedSample, b: &SortedSample) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "w1_sorted needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / n)
}

/// Order-statistic W_2 between two equal-size samples.
pub fn w2_sorted(a: &SortedSample, b: &SortedSample) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "w2_sorted needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / n).sqrt())
}

// ---------------------------------------------------------------------------
// Quantile quadrature
// ---------------------------------------------------------------------------

/// W_p between two 1-D laws given by quantile functions, via midpoint
/// quadrature on (0,1) with `n` nodes:
/// ( (1/n) sum_i |q_p(u_i) - q_q(u_i)|^p )^{1/p}, u_i = (i + 1/2)/n.
pub fn wp_quantile_1d(
    quantile_p: impl Fn(f64) -> f64,
    quantile_q: impl Fn(f64) -> f64,
    p: f64,
    n: usize,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("wp_quantile_1d needs p >= 1, got {p}")));
    }
    if n < 2 {
        return Err(Error::Parameter(format!("wp_quantile_1d needs n >= 2, got {n}")));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        let d = (quantile_p(u) - quantile_q(u)).abs();
        acc += d.powf(p);
    }
    let mean = acc / n as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric("wp_quantile_1d quadrature overflowed".into()));
    }
    Ok(mean.powf(1.0 / p))
}

// ---------------------------------------------------------------------------
// Gaussian mixtures in one dimension
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Finite Gaussian mixture on the line with strictly positive weights
/// summing to one.
#[derive(Debug, Clone)]
pub struct GaussianMixture1d {
    comps: Vec<GaussianComponent>,
}

impl GaussianMixture1d {
    pub fn new(comps: Vec<GaussianComponent>) -> Result<Self> {
        if comps.is_empty() {
            return Err(Error::Parameter("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for c in &comps {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::Parameter(format!("mixture weight {} must be positive", c.weight)));
            }
            if !(c.sd > 0.0) || !c.sd.is_finite() || !c.mean.is_finite() {
                return Err(Error::Parameter("mixture component needs finite mean and sd > 0".into()));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self { comps })
    }

    /// The standard normal as a one-component mixture.
    pub fn standard() -> Self {
        Self {
            comps: vec![GaussianComponent { weight: 1.0, mean: 0.0, sd: 1.0 }],
        }
    }

    /// Unit-variance mixture centred at the given weighted atoms: the law of
    /// atom + standard normal.
    pub fn convolution_of_atoms(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        if atoms.len() != weights.len() || atoms.is_empty() {
            return Err(Error::Parameter("atoms and weights must be equal-length and non-empty".into()));
        }
        Self::new(
            atoms
                .iter()
                .zip(weights)
                .map(|(&a, &w)| GaussianComponent { weight: w, mean: a, sd: 1.0 })
                .collect(),
        )
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.comps
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.comps
            .iter()
            .map(|c| c.weight * normal::cdf((x - c.mean) / c.sd))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.comps
            .iter()
            .map(|c| c.weight * normal::pdf((x - c.mean) / c.sd) / c.sd)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.comps.iter().map(|c| c.weight * c.mean).sum()
    }

    fn max_sd(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, c| m.max(c.sd))
    }

    /// Quantile by bisection to absolute tolerance 1e-12. The initial bracket
    /// is mean +/- 10 * max sd, widened geometrically; more than 200
    /// expansions is treated as non-convergence.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Parameter(format!("quantile needs u in (0,1), got {u}")));
        }
        let centre = self.mean();
        let mut radius = 10.0 * self.max_sd();
        let mut expansions = 0usize;
        while self.cdf(centre - radius) > u || self.cdf(centre + radius) < u {
            radius *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return Err(Error::NonConvergence { iterations: expansions, residual: radius });
            }
        }
        let (mut lo, mut hi) = (centre - radius, centre + radius);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Warm-started safeguarded Newton solve of cdf(x) = u given a lower
    /// bound `lo` with cdf(lo) <= u. Used by the ordered quadrature sweep;
    /// agrees with [`Self::quantile`] to the same 1e-12 tolerance.
    fn quantile_from(&self, u: f64, lo_start: f64, guess: f64) -> Result<f64> {
        let mut lo = lo_start;
        let mut hi = guess.max(lo);
        let mut step = self.max_sd().max(1e-3);
        let mut tries = 0usize;
        while self.cdf(hi) < u {
            hi += step;
            step *= 2.0;
            tries += 1;
            if tries > 300 {
                return Err(Error::NonConvergence { iterations: tries, residual: hi });
            }
        }
        let mut x = guess.clamp(lo, hi);
        for _ in 0..200 {
            if hi - lo <= 1e-13 * (1.0 + x.abs()) {
                break;
            }
            let f = self.cdf(x);
            if f > u {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.pdf(x);
            let mut next = if d > 1e-300 { x + (u - f) / d } else { f64::NAN };
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            x = next;
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Spec-facing wrapper: quantile of a Gaussian mixture by bisection.
pub fn mixture_quantile(mix: &GaussianMixture1d, u: f64) -> Result<f64> {
    mix.quantile(u)
}

/// W_p between two 1-D Gaussian mixtures by quantile quadrature with `n`
/// midpoint nodes. Sweeps the nodes in order, warm-starting each quantile
/// solve from the previous node (quantiles are nondecreasing in u), which
/// keeps the cost near one cdf evaluation per node.
pub fn wp_gaussian_mixtures(
    a: &GaussianMixture1d,
    b: &GaussianMixture1d,
    p: f64,
    n: usize,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("wp_gaussian_mixtures needs p >= 1, got {p}")));
    }
    if n < 2 {
        return Err(Error::Parameter(format!("wp_gaussian_mixtures needs n >= 2, got {n}")));
    }
    let u0 = 0.5 / n as f64;
    let spread = |m: &GaussianMixture1d| {
        m.comps
            .iter()
            .fold(f64::INFINITY, |lo, c| lo.min(c.mean - 12.0 * c.sd))
    };
    let mut qa = a.quantile_from(u0, spread(a), a.mean())?;
    let mut qb = b.quantile_from(u0, spread(b), b.mean())?;
    let mut acc = (qa - qb).abs().powf(p);
    for i in 1..n {
        let u = (i as f64 + 0.5) / n as f64;
        qa = a.quantile_from(u, qa, qa)?;
        qb = b.quantile_from(u, qb, qb)?;
        acc += (qa - qb).abs().powf(p);
    }
    Ok((acc / n as f64).powf(1.0 / p))
}

// ---------------------------------------------------------------------------
// Twisted phase-space norm
// ---------------------------------------------------------------------------

/// The quadratic form ||z||^2_{a,b} = ||x||^2 + 2b<x,v> + a||v||^2 on
/// phase-space pairs z = (x, v).
///
/// The type enforces b^2 < a/4, the regime in which the form is sandwiched
/// between (1/2)min(a,1)||z||^2 and (3/2)max(a,1)||z||^2.
#[derive(Debug, Clone, Copy)]
pub struct WeightedNorm {
    a: f64,
    b: f64,
}

impl WeightedNorm {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Parameter(format!("WeightedNorm needs a > 0 and b >= 0, got a={a}, b={b}")));
        }
        if !(b * b < a / 4.0) {
            return Err(Error::Parameter(format!(
                "WeightedNorm needs b^2 < a/4 (equivalence regime), got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn squared(&self, x: &[f64], v: &[f64]) -> f64 {
        let (mut xx, mut xv, mut vv) = (0.0, 0.0, 0.0);
        for (xi, vi) in x.iter().zip(v) {
            xx += xi * xi;
            xv += xi * vi;
            vv += vi * vi;
        }
        xx + 2.0 * self.b * xv + self.a * vv
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> f64 {
        self.squared(x, v).sqrt()
    }
}

/// Free-function form of the twisted norm. Requires only positive
/// definiteness (b^2 < a); errors on parameters that make the form
/// non-positive.
pub fn weighted_norm(x: &[f64], v: &[f64], a: f64, b: f64) -> Result<f64> {
    if x.len() != v.len() {
        return Err(Error::Parameter("weighted_norm needs matching x/v lengths".into()));
    }
    if !(a > 0.0) || !(b >= 0.0) || !(b * b < a) {
        return Err(Error::Parameter(format!(
            "weighted_norm form is not positive definite for a={a}, b={b}"
        )));
    }
    let (mut xx, mut xv, mut vv) = (0.0, 0.0, 0.0);
    for (xi, vi) in x.iter().zip(v) {
        xx += xi * xi;
        xv += xi * vi;
        vv += vi * vi;
    }
    Ok((xx + 2.0 * b * xv + a * vv).sqrt())
}

// ---------------------------------------------------------------------------
// Sparse max statistics
// ---------------------------------------------------------------------------

/// l2 norm of the k largest-magnitude coordinates; 1-Lipschitz in x, equal to
/// the full norm at k = d and to the max |coordinate| at k = 1.
pub fn f_k(x: &[f64], k: usize) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Parameter("f_k needs a non-empty vector".into()));
    }
    if k == 0 || k > x.len() {
        return Err(Error::Parameter(format!(
            "f_k needs 1 <= k <= d, got k={k}, d={}",
            x.len()
        )));
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    if k < mags.len() {
        mags.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    }
    Ok(mags[..k].iter().map(|m| m * m).sum::<f64>().sqrt())
}

/// Largest coordinate (signed maximum), the 1-Lipschitz test function behind
/// the spike lower bound.
pub fn max_coordinate(x: &[f64]) -> Result<f64> {
    x.iter()
        .copied()
        .max_by(f64::total_cmp)
        .ok_or_else(|| Error::Parameter("max_coordinate needs a non-empty vector".into()))
}

// ---------------------------------------------------------------------------
// Exact small-support optimal transport
// ---------------------------------------------------------------------------

/// Weighted atoms in R^d with strictly positive masses.
#[derive(Debug, Clone)]
pub struct WeightedAtoms {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedAtoms {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Parameter("WeightedAtoms needs equal-length non-empty points/weights".into()));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::Parameter("WeightedAtoms points must share a positive dimension".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Parameter("WeightedAtoms weights must be positive".into()));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Parameter("WeightedAtoms needs at least one point".into()));
        }
        let w = 1.0 / n as f64;
        Self::new(points, vec![w; n])
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

struct FlowEdge {
    to: usize,
    rev: usize,
    cap: f64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<FlowEdge>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self { adj: (0..n).map(|_| Vec::new()).collect() }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(FlowEdge { to, rev: rev_from, cap, cost });
        self.adj[to].push(FlowEdge { to: from, rev: rev_to, cap: 0.0, cost: -cost });
    }

    /// Successive shortest paths with Dijkstra + node potentials. All
    /// original costs are nonnegative, so zero initial potentials are valid.
    fn min_cost_flow(&mut self, source: usize, sink: usize, mut demand: f64, eps: f64) -> Result<f64> {
        let n = self.adj.len();
        let mut potential = vec![0.0f64; n];
        let mut total_cost = 0.0;
        // Every augmentation saturates a source or sink edge exactly, so
        // the edge count bounds the rounds; exceeding it means the caps
        // degenerated to floating-point dust.
        let max_rounds = 4 * n + 16;
        let mut rounds = 0;
        while demand > eps {
            rounds += 1;
            if rounds > max_rounds {
                return Err(Error::NonConvergence { iterations: max_rounds, residual: demand });
            }
            let mut dist = vec![f64::INFINITY; n];
            let mut done = vec![false; n];
            let mut prev: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX); n];
            dist[source] = 0.0;
            for _ in 0..n {
                let mut u = usize::MAX;
                let mut best = f64::INFINITY;
                for v in 0..n {
                    if !done[v] && dist[v] < best {
                        best = dist[v];
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for (ei, e) in self.adj[u].iter().enumerate() {
                    // Never relax a finalized node: rounding in the
                    // potentials could otherwise rewrite its predecessor
                    // and knot the path tree into a cycle.
                    if done[e.to] || e.cap <= eps {
                        continue;
                    }
                    let nd = dist[u] + e.cost + potential[u] - potential[e.to];
                    if nd < dist[e.to] - 1e-15 {
                        dist[e.to] = nd;
                        prev[e.to] = (u, ei);
                    }
                }
            }
            if !dist[sink].is_finite() {
                return Err(Error::Numeric("min-cost flow: sink unreachable before demand met".into()));
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = demand;
            let mut v = sink;
            while v != source {
                let (u, ei) = prev[v];
                push = push.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = sink;
            while v != source {
                let (u, ei) = prev[v];
                let rev = self.adj[u][ei].rev;
                self.adj[u][ei].cap -= push;
                self.adj[v][rev].cap += push;
                total_cost += push * self.adj[u][ei].cost;
                v = u;
            }
            demand -= push;
        }
        Ok(total_cost)
    }
}

/// Exact W_p between two weighted atom sets with equal total mass, each with
/// at most 64 atoms, via min-cost flow on the bipartite transport graph.
pub fn exact_wp_small(a: &WeightedAtoms, b: &WeightedAtoms, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("exact_wp_small needs p >= 1, got {p}")));
    }
    if a.points.len() > 64 || b.points.len() > 64 {
        return Err(Error::Parameter(format!(
            "exact_wp_small supports at most 64 atoms per side, got {} and {}",
            a.points.len(),
            b.points.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Parameter("exact_wp_small needs matching dimensions".into()));
    }
    let (ma, mb) = (a.total_mass(), b.total_mass());
    if (ma - mb).abs() > 1e-9 * ma.max(mb) {
        return Err(Error::Parameter(format!(
            "exact_wp_small needs equal total mass, got {ma} and {mb}"
        )));
    }
    let (na, nb) = (a.points.len(), b.points.len());
    let source = 0;
    let sink = na + nb + 1;
    let mut graph = FlowGraph::new(na + nb + 2);
    for (i, w) in a.weights.iter().enumerate() {
        graph.add_edge(source, 1 + i, *w, 0.0);
    }
    for (j, w) in b.weights.iter().enumerate() {
        graph.add_edge(1 + na + j, sink, *w, 0.0);
    }
    for (i, x) in a.points.iter().enumerate() {
        for (j, y) in b.points.iter().enumerate() {
            let dist2: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - yi) * (xi - yi)).sum();
            let cost = dist2.sqrt().powf(p);
            graph.add_edge(1 + i, 1 + na + j, f64::INFINITY, cost);
        }
    }
    let eps = 1e-13 * ma.max(1.0);
    let cost = graph.min_cost_flow(source, sink, ma, eps)?;
    Ok(cost.max(0.0).powf(1.0 / p))
}
