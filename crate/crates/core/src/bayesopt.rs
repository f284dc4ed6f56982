//! Gaussian-process acquisition functions, small lookahead dynamic programs,
//! and the worst-case grid search baseline.
//!
//! Acquisition functions follow the maximization convention. Grid search
//! minimizes, matching the covering argument it implements.

use crate::gaussian::{cholesky, Cholesky, GaussianError, JitterPolicy, JointGaussian};
use crate::kernels::{NonStationaryKernel, Scaling};
use crate::numerics::{bisect, gauss_hermite, normal_cdf, normal_pdf};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesOptError {
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("tolerance {0} gives zero resolution")]
    InfeasibleTolerance(f64),
}

#[derive(Debug, Clone)]
pub struct GpHistory {
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    pub noise: f64,
    pub kernel: NonStationaryKernel,
    pub scaling: Scaling,
}

impl GpHistory {
    pub fn new(kernel: NonStationaryKernel, noise: f64) -> Self {
        GpHistory { points: Vec::new(), values: Vec::new(), noise, kernel, scaling: Scaling::Unit }
    }

    pub fn push(&mut self, x: DVector<f64>, y: f64) {
        self.points.push(x);
        self.values.push(y);
    }

    fn prior_mean(&self, x: &DVector<f64>) -> f64 {
        self.kernel.mean_value(0.5 * x.norm_squared())
    }

    fn k(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.scaling.factor() * self.kernel.cov_entry(x, None, y, None)
    }
}

/// A fitted posterior: the factorized Gram matrix and K⁻¹(y − m).
#[derive(Debug, Clone)]
pub struct GpPosterior<'a> {
    history: &'a GpHistory,
    chol: Option<Cholesky>,
    alpha: DVector<f64>,
}

impl<'a> GpPosterior<'a> {
    pub fn fit(history: &'a GpHistory) -> Result<Self, BayesOptError> {
        let n = history.points.len();
        if history.values.len() != n {
            return Err(BayesOptError::InvalidInput("points and values differ in length".into()));
        }
        if !(history.noise >= 0.0) {
            return Err(BayesOptError::InvalidInput(format!("noise {}", history.noise)));
        }
        if n == 0 {
            return Ok(GpPosterior { history, chol: None, alpha: DVector::zeros(0) });
        }
        let p = &history.points;
        let gram = DMatrix::from_fn(n, n, |i, j| {
            history.k(&p[i], &p[j]) + if i == j { history.noise } else { 0.0 }
        });
        let chol = cholesky(&gram, JitterPolicy::Escalating)?;
        let resid = DMatrix::from_fn(n, 1, |i, _| history.values[i] - history.prior_mean(&p[i]));
        let alpha = chol.solve(&resid).column(0).into_owned();
        Ok(GpPosterior { history, chol: Some(chol), alpha })
    }

    fn cross(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.history.points;
        DMatrix::from_fn(p.len(), 1, |i, _| self.history.k(&p[i], x))
    }

    pub fn mean(&self, x: &DVector<f64>) -> f64 {
        let kx = self.cross(x);
        self.history.prior_mean(x) + kx.column(0).dot(&self.alpha)
    }

    /// Posterior covariance Σ_n(x, y).
    pub fn cov(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let prior = self.history.k(x, y);
        match &self.chol {
            None => prior,
            Some(ch) => {
                let mut a = self.cross(x);
                ch.solve_lower(&mut a);
                let mut b = self.cross(y);
                ch.solve_lower(&mut b);
                prior - a.column(0).dot(&b.column(0))
            }
        }
    }

    /// (μ_n(x), σ_n(x)).
    pub fn stats(&self, x: &DVector<f64>) -> (f64, f64) {
        (self.mean(x), self.cov(x, x).max(0.0).sqrt())
    }
}

pub fn posterior_stats(history: &GpHistory, x: &DVector<f64>) -> Result<(f64, f64), BayesOptError> {
    Ok(GpPosterior::fit(history)?.stats(x))
}

/// (μ − τ)/σ. With σ = 0 the score is ±∞ by the sign of μ − τ (0 if equal).
pub fn pi_from_moments(mean: f64, std: f64, tau: f64) -> f64 {
    if std > 0.0 {
        return (mean - tau) / std;
    }
    match (mean - tau).partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Greater) => f64::INFINITY,
        Some(std::cmp::Ordering::Less) => f64::NEG_INFINITY,
        _ => 0.0,
    }
}

/// E[(Y − τ)₊] for Y ~ N(mean, std²).
pub fn ei_from_moments(mean: f64, std: f64, tau: f64) -> f64 {
    if !(std > 0.0) {
        return (mean - tau).max(0.0);
    }
    let p = (mean - tau) / std;
    std * (normal_pdf(p) + p * normal_cdf(p))
}

pub fn ucb_from_moments(mean: f64, std: f64, beta: f64) -> f64 {
    mean + beta.max(0.0).sqrt() * std
}

pub fn pi_score(history: &GpHistory, x: &DVector<f64>, tau: f64) -> Result<f64, BayesOptError> {
    let (m, s) = posterior_stats(history, x)?;
    Ok(pi_from_moments(m, s, tau))
}

pub fn ei_score(history: &GpHistory, x: &DVector<f64>, tau: f64) -> Result<f64, BayesOptError> {
    let (m, s) = posterior_stats(history, x)?;
    Ok(ei_from_moments(m, s, tau))
}

pub fn ucb_score(history: &GpHistory, x: &DVector<f64>, beta: f64) -> Result<f64, BayesOptError> {
    if !(beta >= 0.0) {
        return Err(BayesOptError::InvalidInput(format!("beta {beta}")));
    }
    let (m, s) = posterior_stats(history, x)?;
    Ok(ucb_from_moments(m, s, beta))
}

/// E[max_y (a_y + b_y Z)], Z ~ N(0,1), integrated exactly over the pieces
/// of the upper envelope of the lines.
pub fn kg_from_moments(a: &[f64], b: &[f64]) -> f64 {
    let mut lines: Vec<(f64, f64)> = b.iter().cloned().zip(a.iter().cloned()).collect();
    lines.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    // Keep the highest intercept per slope.
    lines.dedup_by(|next, kept| {
        if next.0 == kept.0 {
            kept.1 = kept.1.max(next.1);
            true
        } else {
            false
        }
    });
    // Envelope lines with the z where each starts to dominate.
    let mut hull: Vec<((f64, f64), f64)> = Vec::new();
    for &(slope, icept) in &lines {
        loop {
            let Some(&((s0, i0), start)) = hull.last() else {
                hull.push(((slope, icept), f64::NEG_INFINITY));
                break;
            };
            let z = (i0 - icept) / (slope - s0);
            if z <= start {
                hull.pop();
            } else {
                hull.push(((slope, icept), z));
                break;
            }
        }
    }
    let mut total = 0.0;
    for (k, &((slope, icept), lo)) in hull.iter().enumerate() {
        let hi = hull.get(k + 1).map_or(f64::INFINITY, |h| h.1);
        total += icept * (normal_cdf(hi) - normal_cdf(lo)) + slope * (normal_pdf(lo) - normal_pdf(hi));
    }
    total
}

/// The same expectation by an n-node Gauss-Hermite rule. The integrand has
/// kinks, so the error decays slowly in n.
pub fn kg_gauss_hermite(a: &[f64], b: &[f64], nodes: usize) -> f64 {
    let (z, w) = gauss_hermite(nodes);
    z.iter()
        .zip(&w)
        .map(|(z, w)| {
            w * a.iter().zip(b).map(|(a, b)| a + b * z).fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

/// Knowledge gradient of observing x, over a finite candidate set.
pub fn kg_score(
    history: &GpHistory,
    x: &DVector<f64>,
    candidates: &[DVector<f64>],
) -> Result<f64, BayesOptError> {
    if candidates.is_empty() {
        return Err(BayesOptError::InvalidInput("no candidates".into()));
    }
    let post = GpPosterior::fit(history)?;
    let a: Vec<f64> = candidates.iter().map(|y| post.mean(y)).collect();
    let var_x = post.cov(x, x).max(0.0);
    if var_x == 0.0 {
        return Ok(a.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let pred = (var_x + history.noise).sqrt();
    let b: Vec<f64> = candidates.iter().map(|y| post.cov(y, x) / pred).collect();
    Ok(kg_from_moments(&a, &b))
}

/// Outcome of the N-step lookahead.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadResult {
    /// First evaluation chosen (None when N = 0 and the decision is final).
    pub first_choice: Option<usize>,
    /// Value of each possible first evaluation (empty when N = 0).
    pub q_values: Vec<f64>,
    pub value: f64,
    /// Final decision without further evaluations: argmax of prior means.
    pub greedy: usize,
}

/// Rank-one conditioning of (mean, cov) on an exact observation at index i.
fn observe(mean: &DVector<f64>, cov: &DMatrix<f64>, i: usize, y: f64) -> (DVector<f64>, DMatrix<f64>) {
    let v = cov[(i, i)];
    if !(v > 0.0) {
        return (mean.clone(), cov.clone());
    }
    let col = cov.column(i).into_owned();
    let m = mean + &col * ((y - mean[i]) / v);
    let mut c = cov - &col * col.transpose() / v;
    c[(i, i)] = 0.0;
    (m, c)
}

fn lookahead(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, z: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let v0 = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 {
        return (v0, Vec::new());
    }
    let q: Vec<f64> = (0..mean.len())
        .map(|i| {
            let sd = cov[(i, i)].max(0.0).sqrt();
            if sd == 0.0 {
                return lookahead(mean, cov, n - 1, z, w).0;
            }
            z.iter()
                .zip(w)
                .map(|(zk, wk)| {
                    let (m, c) = observe(mean, cov, i, mean[i] + sd * zk);
                    wk * lookahead(&m, &c, n - 1, z, w).0
                })
                .sum()
        })
        .collect();
    (q.iter().cloned().fold(f64::NEG_INFINITY, f64::max), q)
}

/// Backward induction V_n = max_x E[V_{n−1} | Y(x)] on a finite domain with
/// noise-free observations discretized on `obs_grid` Gauss-Hermite nodes.
pub fn n_eval_optimal(prior: &JointGaussian, n: usize, obs_grid: usize) -> Result<LookaheadResult, BayesOptError> {
    if prior.dim() == 0 || prior.dim() > 4 {
        return Err(BayesOptError::TooLarge(format!("{} domain points (max 4)", prior.dim())));
    }
    if n > 2 {
        return Err(BayesOptError::TooLarge(format!("{n} evaluations (max 2)")));
    }
    if obs_grid == 0 || obs_grid > 64 {
        return Err(BayesOptError::TooLarge(format!("{obs_grid} observation nodes (1..=64)")));
    }
    let (z, w) = gauss_hermite(obs_grid);
    let greedy = (0..prior.dim()).max_by(|&i, &j| prior.mean[i].total_cmp(&prior.mean[j])).unwrap();
    let (value, q) = lookahead(&prior.mean, &prior.cov, n, &z, &w);
    let first_choice = if n == 0 {
        None
    } else {
        (0..q.len()).max_by(|&i, &j| q[i].total_cmp(&q[j]).then(j.cmp(&i)))
    };
    Ok(LookaheadResult { first_choice, q_values: q, value, greedy })
}

/// Modulus of continuity ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Modulus {
    /// ω(δ) = Lδ.
    Linear { l: f64 },
    /// ω(δ) = L·δ^α, 0 < α ≤ 1.
    Power { l: f64, alpha: f64 },
}

impl Modulus {
    pub fn eval(&self, delta: f64) -> f64 {
        match *self {
            Modulus::Linear { l } => l * delta,
            Modulus::Power { l, alpha } => l * delta.max(0.0).powf(alpha),
        }
    }

    /// sup{δ ≥ 0 : ω(δ) ≤ ε}, in closed form for the built-ins.
    pub fn inverse(&self, eps: f64) -> f64 {
        match *self {
            Modulus::Linear { l } => eps / l,
            Modulus::Power { l, alpha } => (eps / l).powf(1.0 / alpha),
        }
    }

    /// sup{δ ≥ 0 : ω(δ) ≤ ε} by bisection, valid for any monotone ω.
    pub fn inverse_bisect(&self, eps: f64) -> f64 {
        pseudo_inverse(|d| self.eval(d), eps)
    }
}

/// sup{δ ≥ 0 : ω(δ) ≤ ε} for a nondecreasing ω, by bisection.
pub fn pseudo_inverse<F: Fn(f64) -> f64>(omega: F, eps: f64) -> f64 {
    if omega(0.0) > eps {
        return 0.0;
    }
    let mut hi = 1.0;
    while omega(hi) <= eps {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let found = bisect(|d| if omega(d) <= eps { -1.0 } else { 1.0 }, 0.0, hi);
    found.unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub delta: f64,
    pub per_axis: usize,
}

/// Centers of the ⌈1/(2δ)⌉ᵈ lattice of sup-norm δ-balls covering [0,1]ᵈ.
pub fn covering_lattice(d: usize, delta: f64) -> Vec<Vec<f64>> {
    let m = ((1.0 / (2.0 * delta)).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(m.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        out.push(idx.iter().map(|&i| (2 * i + 1) as f64 / (2 * m) as f64).collect());
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    out
}

/// Evaluates all centers of the covering lattice for δ = ω⁻¹(ε) and returns
/// the smallest value found.
pub fn grid_search<F: Fn(&[f64]) -> f64>(
    objective: F,
    d: usize,
    omega: &Modulus,
    eps: f64,
) -> Result<GridSearchResult, BayesOptError> {
    if d == 0 || d > 4 {
        return Err(BayesOptError::TooLarge(format!("dimension {d} (max 4)")));
    }
    if !(eps > 0.0) {
        return Err(BayesOptError::InfeasibleTolerance(eps));
    }
    let delta = omega.inverse(eps);
    if !(delta > 0.0) {
        return Err(BayesOptError::InfeasibleTolerance(eps));
    }
    let lattice = covering_lattice(d, delta.min(1.0));
    let per_axis = ((1.0 / (2.0 * delta.min(1.0))).ceil() as usize).max(1);
    let mut best = (f64::INFINITY, Vec::new());
    for c in &lattice {
        let v = objective(c);
        if v < best.0 {
            best = (v, c.clone());
        }
    }
    Ok(GridSearchResult { argmin: best.1, value: best.0, evaluations: lattice.len(), delta, per_axis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Euclidean,
    Sup,
}

impl Norm {
    pub fn dist(self, x: &[f64], y: &[f64]) -> f64 {
        let it = x.iter().zip(y).map(|(a, b)| (a - b).abs());
        match self {
            Norm::Euclidean => it.map(|t| t * t).sum::<f64>().sqrt(),
            Norm::Sup => it.fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpKind {
    /// L(‖x−c‖ − δ) inside the ball, 0 outside.
    Lipschitz,
    /// (L/4)(2‖x−c‖² − δ²) for ‖x−c‖ ≤ δ/2, −(L/2)(δ − ‖x−c‖)² for
    /// δ/2 ≤ ‖x−c‖ ≤ δ, 0 outside. Gradient is L-Lipschitz.
    Smooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BumpFixture {
    pub kind: BumpKind,
    pub l: f64,
    pub delta: f64,
    pub center: Vec<f64>,
    pub norm: Norm,
}

impl BumpFixture {
    pub fn minimum(&self) -> f64 {
        match self.kind {
            BumpKind::Lipschitz => -self.l * self.delta,
            BumpKind::Smooth => -self.l * self.delta * self.delta / 4.0,
        }
    }
}

/// Value and (almost everywhere) gradient of a bump; the gradient is 0 on
/// the flat region and at the center.
pub fn bump_eval(b: &BumpFixture, x: &[f64]) -> (f64, Vec<f64>) {
    let u: Vec<f64> = x.iter().zip(&b.center).map(|(x, c)| x - c).collect();
    let r = b.norm.dist(x, &b.center);
    let zero = vec![0.0; x.len()];
    if r >= b.delta {
        return (0.0, zero);
    }
    // Gradient of the norm itself.
    let dnorm = |u: &[f64]| -> Vec<f64> {
        if r == 0.0 {
            return vec![0.0; u.len()];
        }
        match b.norm {
            Norm::Euclidean => u.iter().map(|t| t / r).collect(),
            Norm::Sup => {
                let k = (0..u.len()).max_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs())).unwrap();
                (0..u.len()).map(|i| if i == k { u[k].signum() } else { 0.0 }).collect()
            }
        }
    };
    let (l, d) = (b.l, b.delta);
    match b.kind {
        BumpKind::Lipschitz => (l * (r - d), dnorm(&u).iter().map(|g| l * g).collect()),
        BumpKind::Smooth => {
            if r <= d / 2.0 {
                let g = dnorm(&u).iter().map(|g| l * r * g).collect();
                (l / 4.0 * (2.0 * r * r - d * d), g)
            } else {
                let g = dnorm(&u).iter().map(|g| l * (d - r) * g).collect();
                (-l / 2.0 * (d - r).powi(2), g)
            }
        }
    }
}

/// Given an evaluation set smaller than the covering lattice, places a
/// sup-norm Lipschitz bump at a point x* of [0,1]ᵈ whose distance δ⁺ to every
/// evaluated point exceeds δ = ω⁻¹(ε). The bump is zero at all evaluated
/// points and reaches −Lδ⁺ < −ε, so any strategy using these points misses
/// the minimum by more than ε.
///
/// x* is taken from the packing lattice {i/(m−1)}ᵈ, whose points are more than
/// 2δ apart, so m^d − 1 evaluations leave at least one of them uncovered.
pub fn adversarial_fixture(points: &[Vec<f64>], d: usize, l: f64, eps: f64) -> Option<BumpFixture> {
    let delta = eps / l;
    let m = (1.0 / (2.0 * delta)).ceil() as usize;
    if m < 2 {
        return None;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; d];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 / (m - 1) as f64).collect();
        let dist = points.iter().map(|q| Norm::Sup.dist(&p, q)).fold(f64::INFINITY, f64::min);
        if best.as_ref().map_or(true, |b| dist > b.0) {
            best = Some((dist, p));
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let (dist, center) = best?;
    if !(dist > delta) {
        return None;
    }
    let radius = if dist.is_finite() { dist } else { 2.0 * delta };
    Some(BumpFixture { kind: BumpKind::Lipschitz, l, delta: radius, center, norm: Norm::Sup })
}

/// Draws a GRF sample at the given points: prior mean plus L·z.
pub fn sample_grf(
    kernel: &NonStationaryKernel,
    points: &[DVector<f64>],
    z: &[f64],
) -> Result<Vec<f64>, BayesOptError> {
    let n = points.len();
    if z.len() != n {
        return Err(BayesOptError::InvalidInput("normal draws length".into()));
    }
    let k = DMatrix::from_fn(n, n, |i, j| kernel.cov_entry(&points[i], None, &points[j], None));
    let ch = cholesky(&k, JitterPolicy::Escalating)?;
    let v = &ch.factor * DVector::from_column_slice(z);
    Ok((0..n).map(|i| kernel.mean_value(0.5 * points[i].norm_squared()) + v[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    Pi { eps: f64 },
    Ei { eps: f64 },
    Ucb { beta: f64 },
    Kg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoStep {
    pub iter: usize,
    pub index: usize,
    pub value: f64,
    pub score: f64,
    pub best: f64,
    pub regret: f64,
}

/// Runs a BO loop over a finite grid whose true values are known. The first
/// query is the grid point with the highest prior score.
pub fn run_bo_on_grid(
    kernel: &NonStationaryKernel,
    grid: &[DVector<f64>],
    truth: &[f64],
    noise: f64,
    noise_draws: &[f64],
    acquisition: Acquisition,
    iterations: usize,
) -> Result<Vec<BoStep>, BayesOptError> {
    if grid.len() != truth.len() || grid.is_empty() {
        return Err(BayesOptError::InvalidInput("grid and truth".into()));
    }
    let optimum = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut hist = GpHistory::new(kernel.clone(), noise);
    let mut steps = Vec::with_capacity(iterations);
    let mut best = f64::NEG_INFINITY;
    for it in 0..iterations {
        let post = GpPosterior::fit(&hist)?;
        let tau_base = hist.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let stats: Vec<(f64, f64)> = grid.iter().map(|x| post.stats(x)).collect();
        let scores: Vec<f64> = match acquisition {
            Acquisition::Pi { eps } => stats.iter().map(|&(m, s)| {
                if hist.values.is_empty() { m } else { pi_from_moments(m, s, tau_base + eps) }
            }).collect(),
            Acquisition::Ei { eps } => stats.iter().map(|&(m, s)| {
                if hist.values.is_empty() { m } else { ei_from_moments(m, s, tau_base + eps) }
            }).collect(),
            Acquisition::Ucb { beta } => stats.iter().map(|&(m, s)| ucb_from_moments(m, s, beta)).collect(),
            Acquisition::Kg => {
                let a: Vec<f64> = stats.iter().map(|s| s.0).collect();
                grid.iter()
                    .zip(&stats)
                    .map(|(x, &(_, s))| {
                        let pred = (s * s + noise).sqrt();
                        if pred == 0.0 {
                            return a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        }
                        let b: Vec<f64> = grid.iter().map(|y| post.cov(y, x) / pred).collect();
                        kg_from_moments(&a, &b)
                    })
                    .collect()
            }
        };
        let index = (0..grid.len())
            .max_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(j.cmp(&i)))
            .unwrap();
        let y = truth[index] + noise.sqrt() * noise_draws.get(it).copied().unwrap_or(0.0);
        hist.push(grid[index].clone(), y);
        best = best.max(truth[index]);
        steps.push(BoStep { iter: it, index, value: y, score: scores[index], best, regret: optimum - best });
    }
    Ok(steps)
}
