//! Estimation of C(0), C'(0) and the noise terms from mini-batch losses.
//!
//! Squared deviations Z_b = (L_b − μ)² satisfy E[Z_b] = β₀ + β₁/b with
//! β₀ = C(0) and β₁ = C_ε(0), and the same holds for ‖∇L_b‖²/d with
//! β₀ = −C'(0), β₁ = −C_ε'(0). Both lines are fitted by weighted least
//! squares with weights 1/σ_b², σ_b² = 2(β₀ + β₁/b)².

use crate::kernels::{Family, StationaryKernel};
use crate::numerics::nelder_mead;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("no samples")]
    Empty,
    #[error("need at least 3 samples with 2 distinct batch sizes")]
    Collinear,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("batch size distribution has no spread")]
    NoSpread,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub batch_size: u64,
    pub loss: f64,
    pub grad_sq_norm: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub beta0: f64,
    pub beta1: f64,
    pub var_beta0: f64,
    pub relative_std: f64,
    pub n_samples_used: usize,
}

impl VarianceEstimate {
    /// Symmetric normal confidence interval for β₀.
    pub fn confidence_interval(&self, z: f64) -> (f64, f64) {
        let h = z * self.var_beta0.sqrt();
        (self.beta0 - h, self.beta0 + h)
    }
}

/// Regression pairs (1/b, value) for both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub loss: Vec<(f64, f64)>,
    pub grad: Vec<(f64, f64)>,
}

pub fn squared_deviation_stream(samples: &[LossSample], mean: f64) -> Result<Streams, EstimationError> {
    if samples.is_empty() {
        return Err(EstimationError::Empty);
    }
    let mut loss = Vec::with_capacity(samples.len());
    let mut grad = Vec::with_capacity(samples.len());
    for s in samples {
        if s.batch_size == 0 || s.dim == 0 {
            return Err(EstimationError::InvalidInput("zero batch size or dimension".into()));
        }
        let x = 1.0 / s.batch_size as f64;
        loss.push((x, (s.loss - mean).powi(2)));
        grad.push((x, s.grad_sq_norm / s.dim as f64));
    }
    Ok(Streams { loss, grad })
}

/// Weighted least squares for value ≈ β₀ + β₁·x. The reported variance is
/// the first diagonal entry of (HᵀWH)⁻¹, exact when weights are inverse
/// variances.
pub fn wls_fit(pairs: &[(f64, f64)], weights: &[f64]) -> Result<VarianceEstimate, EstimationError> {
    if pairs.len() != weights.len() {
        return Err(EstimationError::InvalidInput("weights length".into()));
    }
    if pairs.len() < 3 {
        return Err(EstimationError::Collinear);
    }
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(x, y), &w) in pairs.iter().zip(weights) {
        if !(w > 0.0) || !w.is_finite() {
            return Err(EstimationError::InvalidInput(format!("weight {w}")));
        }
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
        t0 += w * y;
        t1 += w * x * y;
    }
    // Centered form of the determinant avoids cancellation.
    let xbar = s1 / s0;
    let spread: f64 = pairs.iter().zip(weights).map(|(&(x, _), &w)| w * (x - xbar).powi(2)).sum();
    if !(spread > 1e-14 * s2.max(f64::MIN_POSITIVE)) {
        return Err(EstimationError::Collinear);
    }
    let det = s0 * spread;
    let beta1 = (t1 - xbar * t0) / spread;
    let beta0 = t0 / s0 - beta1 * xbar;
    let var_beta0 = s2 / det;
    let relative_std = if beta0 > 0.0 { var_beta0.sqrt() / beta0 } else { f64::INFINITY };
    Ok(VarianceEstimate { beta0, beta1, var_beta0, relative_std, n_samples_used: pairs.len() })
}

/// Variance of Z_b under the Gaussian fourth moment, scaled by `per_sample`
/// (1 for losses, 1/d for the averaged squared gradient).
fn sigma_sq(beta0: f64, beta1: f64, b_inv: f64, per_sample: f64) -> f64 {
    2.0 * (beta0 + beta1 * b_inv).powi(2) * per_sample
}

/// Unit-weight fit, then reweighting with the fitted variance line until the
/// coefficients settle (at most 100 passes).
fn fit_stream(pairs: &[(f64, f64)], per_sample: f64) -> Result<VarianceEstimate, EstimationError> {
    let ones = vec![1.0; pairs.len()];
    let mut est = wls_fit(pairs, &ones)?;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let floor = 1e-6 * mean_y.abs().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let (b0, b1) = (est.beta0.max(floor), est.beta1.max(0.0));
        let w: Vec<f64> = pairs.iter().map(|&(x, _)| 1.0 / sigma_sq(b0, b1, x, per_sample)).collect();
        let next = wls_fit(pairs, &w)?;
        let settled = (next.beta0 - est.beta0).abs() <= 1e-10 * next.beta0.abs().max(floor)
            && (next.beta1 - est.beta1).abs() <= 1e-10 * next.beta1.abs().max(floor);
        est = next;
        if settled {
            break;
        }
    }
    Ok(est)
}

/// A Boltzmann distribution ν(b) ∝ exp(λ₁/σ_b² − λ₂b) on [b_min, b_max].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDistribution {
    pub lambda1: f64,
    pub lambda2: f64,
    pub b_min: u64,
    pub b_max: u64,
    pub weights: Vec<f64>,
    /// The optimizer stopped at its iteration cap.
    pub not_converged: bool,
}

impl BatchDistribution {
    pub fn boltzmann(
        lambda1: f64,
        lambda2: f64,
        beta0: f64,
        beta1: f64,
        b_min: u64,
        b_max: u64,
    ) -> Result<Self, EstimationError> {
        if b_min == 0 || b_max < b_min {
            return Err(EstimationError::InvalidInput(format!("support [{b_min}, {b_max}]")));
        }
        let energy: Vec<f64> = (b_min..=b_max)
            .map(|b| lambda1 / sigma_sq(beta0, beta1, 1.0 / b as f64, 1.0) - lambda2 * b as f64)
            .collect();
        let top = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = energy.iter().map(|e| (e - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(BatchDistribution { lambda1, lambda2, b_min, b_max, weights, not_converged: false })
    }

    pub fn uniform(b_min: u64, b_max: u64) -> Result<Self, EstimationError> {
        Self::boltzmann(0.0, 0.0, 1.0, 0.0, b_min, b_max)
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.b_min..=self.b_max
    }

    pub fn prob(&self, b: u64) -> f64 {
        if b < self.b_min || b > self.b_max {
            0.0
        } else {
            self.weights[(b - self.b_min) as usize]
        }
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.support().zip(&self.weights).map(|(b, w)| w * f(b as f64)).sum()
    }

    /// Inverse-cdf draw.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (b, w) in self.support().zip(&self.weights) {
            acc += w;
            if u < acc {
                return b;
            }
        }
        self.b_max
    }
}

/// Var(β̂₀) of the WLS fit on n losses with batch sizes drawn from `dist`.
pub fn var_beta0(dist: &BatchDistribution, beta0: f64, beta1: f64, n: usize) -> f64 {
    let w = |b: f64| 1.0 / sigma_sq(beta0, beta1, 1.0 / b, 1.0);
    let ew = dist.expectation(w);
    let ewx = dist.expectation(|b| w(b) / b);
    let ewx2 = dist.expectation(|b| w(b) / (b * b));
    let xbar = ewx / ew;
    let spread = dist.expectation(|b| w(b) * (1.0 / b - xbar).powi(2));
    if !(spread > 1e-15 * ewx2) {
        return f64::INFINITY;
    }
    ewx2 / (ew * spread) / n.max(1) as f64
}

/// Sample cost per unit of β̂₀ precision: E[B]·n·Var(β̂₀).
pub fn batch_objective(dist: &BatchDistribution, beta0: f64, beta1: f64) -> f64 {
    dist.expectation(|b| b) * var_beta0(dist, beta0, beta1, 1)
}

/// Nelder-Mead over log(λ₁), log(λ₂), compared against the uniform
/// distribution (λ = 0), which is also admissible.
pub fn optimize_batch_distribution(
    beta0: f64,
    beta1: f64,
    budget: u64,
    b_min: u64,
    b_max: u64,
) -> Result<BatchDistribution, EstimationError> {
    if !(beta0 > 0.0) || beta1 < 0.0 {
        return Err(EstimationError::InvalidInput(format!("beta0 {beta0}, beta1 {beta1}")));
    }
    if budget < b_min {
        return Err(EstimationError::InvalidInput(format!("budget {budget} below b_min {b_min}")));
    }
    let b_max = b_max.min(budget).max(b_min);
    let w_max = 1.0 / sigma_sq(beta0, beta1, 1.0 / b_max as f64, 1.0);
    let scale1 = 1.0 / w_max;
    let scale2 = 1.0 / b_max as f64;
    let build = |p: &[f64]| {
        BatchDistribution::boltzmann(p[0].exp() * scale1, p[1].exp() * scale2, beta0, beta1, b_min, b_max)
    };
    let objective = |p: &[f64]| match build(p) {
        Ok(d) => batch_objective(&d, beta0, beta1),
        Err(_) => f64::INFINITY,
    };
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for start in [[0.0, 0.0], [2.0, 2.0], [-2.0, 3.0]] {
        let r = nelder_mead(objective, &start, 1.0, 1e-6, 500);
        if best.as_ref().map_or(true, |b| r.value < b.0) {
            best = Some((r.value, r.x, r.converged));
        }
    }
    let (value, x, converged) = best.unwrap();
    let uniform = BatchDistribution::uniform(b_min, b_max)?;
    if batch_objective(&uniform, beta0, beta1) <= value {
        return Ok(uniform);
    }
    let mut d = build(&x)?;
    d.not_converged = !converged;
    Ok(d)
}

/// Fits σ² and s so that C(0) = c0 and −C'(0) = c0_prime_abs.
pub fn fit_kernel_params(
    c0: f64,
    c0_prime_abs: f64,
    family: Family,
    beta: f64,
) -> Result<StationaryKernel, EstimationError> {
    if !(c0 > 0.0) || !(c0_prime_abs > 0.0) {
        return Err(EstimationError::InvalidInput(format!("c0 {c0}, c0' {c0_prime_abs}")));
    }
    let s = match family {
        Family::SquaredExponential | Family::RationalQuadratic => (c0 / c0_prime_abs).sqrt(),
        Family::Matern32 => (3.0 * c0 / c0_prime_abs).sqrt(),
        Family::Matern52 => (5.0 * c0 / (3.0 * c0_prime_abs)).sqrt(),
    };
    StationaryKernel::new(family, c0, s, beta).map_err(|e| EstimationError::InvalidInput(e.to_string()))
}

/// A source of mini-batch losses.
pub trait LossOracle: Sync {
    fn sample(&self, batch_size: u64, rng: &mut ChaCha8Rng) -> LossSample;
    fn dim(&self) -> usize;
    /// Calls may run concurrently.
    fn thread_safe(&self) -> bool {
        false
    }
}

/// Independent draws from a stationary model: each probe point is far from
/// all others, so values, noise and gradients are independent.
#[derive(Debug, Clone)]
pub struct SyntheticGrfOracle {
    pub c0: f64,
    pub c0_prime_abs: f64,
    pub noise_c0: f64,
    pub noise_c0_prime_abs: f64,
    pub mean: f64,
    pub dim: usize,
}

impl LossOracle for SyntheticGrfOracle {
    fn sample(&self, batch_size: u64, rng: &mut ChaCha8Rng) -> LossSample {
        let b = batch_size as f64;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let chi = ChiSquared::new(self.dim as f64).unwrap().sample(rng);
        LossSample {
            batch_size,
            loss: self.mean + self.c0.sqrt() * z1 + (self.noise_c0 / b).sqrt() * z2,
            grad_sq_norm: (self.c0_prime_abs + self.noise_c0_prime_abs / b) * chi,
            dim: self.dim,
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn thread_safe(&self) -> bool {
        true
    }
}

/// Mean squared error of a random linear model J(w) = ‖w − m‖² with
/// m ~ N(0, σ²I), observed at probes w uniform on the sphere of radius r.
///
/// The centered cost J̃(w) = ‖w‖² + σ²d − 2⟨w,m⟩ has covariance 4σ²⟨w,w̃⟩,
/// so C(0) = 4σ²r² at every probe. Mini-batch noise is Gaussian with the
/// unconditional covariance 2(⟨w,w̃⟩ + σ²d)²/b.
#[derive(Debug, Clone)]
pub struct RandomLinearOracle {
    pub dim: usize,
    pub sigma2: f64,
    pub radius: f64,
    pub target: DVector<f64>,
}

impl RandomLinearOracle {
    pub fn new(dim: usize, sigma2: f64, radius: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let sd = sigma2.sqrt();
        let target = DVector::from_fn(dim, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        RandomLinearOracle { dim, sigma2, radius, target }
    }

    pub fn true_c0(&self) -> f64 {
        4.0 * self.sigma2 * self.radius * self.radius
    }

    /// Var(∂ᵢJ̃) = 4σ²; the gradient stream also picks up the squared mean
    /// gradient ‖2w‖²/d.
    pub fn true_c0_prime_abs(&self) -> f64 {
        4.0 * self.sigma2
    }

    pub fn true_noise_c0(&self) -> f64 {
        2.0 * (self.radius * self.radius + self.sigma2 * self.dim as f64).powi(2)
    }

    pub fn true_mean(&self) -> f64 {
        self.radius * self.radius + self.sigma2 * self.dim as f64
    }
}

impl LossOracle for RandomLinearOracle {
    fn sample(&self, batch_size: u64, rng: &mut ChaCha8Rng) -> LossSample {
        let d = self.dim;
        let b = batch_size as f64;
        let mut w = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        w *= self.radius / w.norm();
        let c = self.sigma2 * d as f64;
        let r2 = w.norm_squared();
        let cost = r2 + c - 2.0 * w.dot(&self.target);
        let loss_noise = (2.0f64).sqrt() * (r2 + c) / b.sqrt() * rng.sample::<f64, _>(StandardNormal);
        // Gradient noise covariance (4(r² + c)I + 4wwᵀ)/b.
        let iso = (4.0 * (r2 + c) / b).sqrt();
        let along = (4.0 / b).sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut g = 2.0 * (&w - &self.target);
        for i in 0..d {
            g[i] += iso * rng.sample::<f64, _>(StandardNormal) + along * w[i];
        }
        LossSample { batch_size, loss: cost + loss_noise, grad_sq_norm: g.norm_squared(), dim: d }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn thread_safe(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub tol: f64,
    /// Samples-worth (sum of batch sizes) of the pilot.
    pub pilot_size: u64,
    pub b_min: u64,
    pub b_max: u64,
    /// Total samples-worth budget.
    pub budget: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { tol: 0.3, pilot_size: 6000, b_min: 20, b_max: 2048, budget: 50_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub loss: VarianceEstimate,
    pub grad: VarianceEstimate,
    pub mean: f64,
    pub samples: Vec<LossSample>,
    pub distribution: Option<BatchDistribution>,
    pub rounds: usize,
    pub budget_exhausted: bool,
}

/// Geometric pilot schedule b_min, 2b_min, 4b_min, … ≤ b_max; two points
/// {b_min, 2b_min} when the support is a single batch size.
pub fn pilot_batch_sizes(b_min: u64, b_max: u64) -> Vec<u64> {
    let mut out = vec![b_min];
    let mut b = b_min;
    while b * 2 <= b_max {
        b *= 2;
        out.push(b);
    }
    if out.len() < 2 {
        out.push(2 * b_min);
    }
    out
}

fn draw_samples<O: LossOracle + ?Sized>(
    oracle: &O,
    sizes: &[u64],
    seed: u64,
    first_call: u64,
) -> Vec<LossSample> {
    let call = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(first_call + i as u64);
        oracle.sample(sizes[i], &mut rng)
    };
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if !oracle.thread_safe() || threads < 2 || sizes.len() < 64 {
        return (0..sizes.len()).map(call).collect();
    }
    let chunk = sizes.len().div_ceil(threads);
    let mut out = vec![None; sizes.len()];
    std::thread::scope(|scope| {
        for (k, slot) in out.chunks_mut(chunk).enumerate() {
            let call = &call;
            scope.spawn(move || {
                for (j, s) in slot.iter_mut().enumerate() {
                    *s = Some(call(k * chunk + j));
                }
            });
        }
    });
    out.into_iter().map(|s| s.unwrap()).collect()
}

/// Precision weighted mean of the losses under the fitted variance line.
fn weighted_mean(samples: &[LossSample], fit: &VarianceEstimate) -> f64 {
    let floor = 1e-12f64.max(fit.beta0.abs() * 1e-6);
    let (mut num, mut den) = (0.0, 0.0);
    for s in samples {
        let v = (fit.beta0.max(floor) + fit.beta1.max(0.0) / s.batch_size as f64).max(floor);
        num += s.loss / v;
        den += 1.0 / v;
    }
    num / den
}

fn fit_both(samples: &[LossSample], mean: f64) -> Result<(VarianceEstimate, VarianceEstimate), EstimationError> {
    let streams = squared_deviation_stream(samples, mean)?;
    let d = samples[0].dim as f64;
    Ok((fit_stream(&streams.loss, 1.0)?, fit_stream(&streams.grad, 1.0 / d)?))
}

/// Estimates from a fixed sample set (no further oracle calls).
pub fn estimate_from_samples(
    samples: &[LossSample],
) -> Result<(VarianceEstimate, VarianceEstimate, f64), EstimationError> {
    if samples.is_empty() {
        return Err(EstimationError::Empty);
    }
    let mut mean = samples.iter().map(|s| s.loss).sum::<f64>() / samples.len() as f64;
    let (loss, _) = fit_both(samples, mean)?;
    mean = weighted_mean(samples, &loss);
    let (loss, grad) = fit_both(samples, mean)?;
    Ok((loss, grad, mean))
}

/// Pilot, fit, optimize the batch distribution, sample more, refit, until
/// both relative standard deviations are below `tol` or the budget is spent.
pub fn bootstrap_estimate<O: LossOracle + ?Sized>(
    oracle: &O,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapOutcome, EstimationError> {
    if !(config.tol > 0.0) {
        return Err(EstimationError::InvalidInput(format!("tol {}", config.tol)));
    }
    if config.b_min == 0 || config.b_max < config.b_min {
        return Err(EstimationError::InvalidInput("batch size support".into()));
    }
    let schedule = pilot_batch_sizes(config.b_min, config.b_max);
    let mut sizes = Vec::new();
    let mut used = 0u64;
    while used < config.pilot_size || sizes.len() < 3 * schedule.len() {
        let b = schedule[sizes.len() % schedule.len()];
        sizes.push(b);
        used += b;
    }
    let mut calls = 0u64;
    let mut samples = draw_samples(oracle, &sizes, seed, calls);
    calls += sizes.len() as u64;

    let mut mean = samples.iter().map(|s| s.loss).sum::<f64>() / samples.len() as f64;
    let (first, _) = fit_both(&samples, mean)?;
    mean = weighted_mean(&samples, &first);

    let mut rounds = 0;
    let mut distribution = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        // μ is re-estimated from every sample so far: a stale μ adds its own
        // estimation variance to the intercept.
        let (loss, _) = fit_both(&samples, mean)?;
        mean = weighted_mean(&samples, &loss);
        let (loss, grad) = fit_both(&samples, mean)?;
        let done = loss.relative_std < config.tol && grad.relative_std < config.tol;
        if done || used >= config.budget {
            return Ok(BootstrapOutcome {
                loss,
                grad,
                mean,
                samples,
                distribution,
                rounds,
                budget_exhausted: !done,
            });
        }
        rounds += 1;
        let mean_z = loss.beta0.abs() + loss.beta1.abs() / config.b_min as f64;
        let beta0 = loss.beta0.max(1e-6 * mean_z.max(f64::MIN_POSITIVE));
        let dist = optimize_batch_distribution(beta0, loss.beta1.max(0.0), config.budget, config.b_min, config.b_max)?;
        // Grow the sample by roughly what the current estimate suggests is
        // missing, at least one pilot's worth.
        let ratio = (loss.relative_std / config.tol).powi(2).max((grad.relative_std / config.tol).powi(2));
        let wanted = if ratio.is_finite() { (used as f64 * (ratio - 1.0).clamp(0.25, 4.0)) as u64 } else { used };
        let chunk = wanted.max(config.pilot_size).min(config.budget.saturating_sub(used)).max(1);
        let mut new_sizes = Vec::new();
        let mut added = 0u64;
        while added < chunk {
            let b = dist.draw(&mut rng);
            new_sizes.push(b);
            added += b;
        }
        used += added;
        let fresh = draw_samples(oracle, &new_sizes, seed, calls);
        calls += new_sizes.len() as u64;
        samples.extend(fresh);
        distribution = Some(dist);
    }
}
