//! Exact simulation of gradient span algorithms on isotropic Gaussian random
//! functions.
//!
//! Every visited point and every observed gradient lies in a previsible span
//! with an orthonormal basis v₀, v₁, … that is never materialized in ambient
//! coordinates. At a new point the in-span block (value and directional
//! derivatives along the basis) is conditioned on all past in-span
//! observations. Derivatives orthogonal to the span are conditionally i.i.d.
//! centered with a common variance σ_w², so their contribution is a single
//! χ² draw. The cost of a step does not depend on the ambient dimension.

use crate::gaussian::{condition, GaussianError, JointGaussian};
use crate::kernels::{joint_cov_block, KernelError, NonStationaryKernel, Scaling};
use crate::rfd::{arfd_step, quotient_clamped, step_size_closed, RfdError, Theta};
use crate::kernels::StationaryKernel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Candidate norms below this freeze the span.
pub const FREEZE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("conditional covariance not positive semidefinite at step {step} (block {rows}x{rows}): {source}")]
    NotPsd { step: usize, rows: usize, source: GaussianError },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Rfd(#[from] RfdError),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("mixed configurations: {0}")]
    MixedConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Finite(usize),
    /// The d → ∞ limit of an inverse-dimension scaled sequence.
    Infinite,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Finite(d) => write!(f, "{d}"),
            Dimension::Infinite => f.write_str("inf"),
        }
    }
}

/// Counter-based stream: one generator per (seed, step, block).
pub fn stream_rng(seed: u64, step: usize, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 8) | block);
    rng
}

const BLOCK_SPAN: u64 = 0;
const BLOCK_ORTHO: u64 = 1;
const BLOCK_NAIVE: u64 = 2;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// The scalars a prefactor rule may use: values f(X₀..X_{n−1}) and the Gram
/// matrix of (x₀, ∇f(X₀), …, ∇f(X_{n−1})).
#[derive(Debug, Clone, PartialEq)]
pub struct Information {
    pub f: Vec<f64>,
    pub gram: DMatrix<f64>,
}

impl Information {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    fn from_vectors(x0: &DVector<f64>, grads: &[DVector<f64>], f: &[f64]) -> Self {
        let vs: Vec<&DVector<f64>> = std::iter::once(x0).chain(grads.iter()).collect();
        let n = vs.len();
        Information { f: f.to_vec(), gram: DMatrix::from_fn(n, n, |i, j| vs[i].dot(vs[j])) }
    }
}

/// A user-supplied rule: returns (h^{(x)}, h^{(g)}_0, …, h^{(g)}_{n−1}) so that
/// X_n = h^{(x)} x₀ + Σ h^{(g)}_k ∇f(X_k), given the information of n points.
pub trait PrefactorRule: Send + Sync + fmt::Debug {
    fn prefactors(&self, info: &Information) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub enum GradientSpanAlgorithm {
    ConstantLr { alpha: f64 },
    HeavyBall { alpha: f64, momentum: f64 },
    /// Step η*(Θ) along the normalized latest gradient.
    RfdGd { kernel: StationaryKernel, mean: f64 },
    /// Step C(0)/(−C'(0))·Θ; above the mean it uses η*(∞) instead.
    ArfdGd { kernel: StationaryKernel, mean: f64 },
    Custom(Arc<dyn PrefactorRule>),
}

/// X_k = X_{k−1} + momentum·(X_{k−1} − X_{k−2}) + grad·∇f(X_{k−1}).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Increment {
    momentum: f64,
    grad: f64,
    above_mean: bool,
}

impl GradientSpanAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            GradientSpanAlgorithm::ConstantLr { .. } => "gd",
            GradientSpanAlgorithm::HeavyBall { .. } => "heavy-ball",
            GradientSpanAlgorithm::RfdGd { .. } => "rfd",
            GradientSpanAlgorithm::ArfdGd { .. } => "a-rfd",
            GradientSpanAlgorithm::Custom(_) => "custom",
        }
    }

    /// Increment producing X_k from the first k observations.
    fn increment(&self, info: &Information, k: usize) -> Result<Increment, SimError> {
        let f = info.f[k - 1];
        let g = info.gram[(k, k)].max(0.0).sqrt();
        let inc = match self {
            GradientSpanAlgorithm::ConstantLr { alpha } => Increment { grad: -alpha, ..Default::default() },
            GradientSpanAlgorithm::HeavyBall { alpha, momentum } => {
                Increment { momentum: *momentum, grad: -alpha, above_mean: false }
            }
            GradientSpanAlgorithm::RfdGd { kernel, mean } => {
                if g == 0.0 {
                    return Ok(Increment::default());
                }
                let (theta, above_mean) = quotient_clamped(f, g, *mean);
                let eta = step_size_closed(kernel, theta)?.step_size;
                Increment { momentum: 0.0, grad: -eta / g, above_mean }
            }
            GradientSpanAlgorithm::ArfdGd { kernel, mean } => {
                if g == 0.0 {
                    return Ok(Increment::default());
                }
                let (theta, above_mean) = quotient_clamped(f, g, *mean);
                let eta = match theta {
                    Theta::Finite(t) => arfd_step(kernel, t),
                    Theta::Infinite => step_size_closed(kernel, Theta::Infinite)?.step_size,
                };
                Increment { momentum: 0.0, grad: -eta / g, above_mean }
            }
            GradientSpanAlgorithm::Custom(_) => unreachable!("custom rules return prefactors directly"),
        };
        Ok(inc)
    }

    /// Prefactors of X_n for n = info.len(), and whether the last step was
    /// taken from above the mean.
    pub fn prefactors(&self, info: &Information) -> Result<(Vec<f64>, bool), SimError> {
        let n = info.len();
        if let GradientSpanAlgorithm::Custom(rule) = self {
            let h = rule.prefactors(info);
            if h.len() != n + 1 {
                return Err(SimError::Infeasible(format!("rule returned {} prefactors, expected {}", h.len(), n + 1)));
            }
            return Ok((h, false));
        }
        let mut prev: Vec<f64> = vec![0.0; n + 1];
        let mut cur: Vec<f64> = vec![0.0; n + 1];
        cur[0] = 1.0;
        prev[0] = 1.0;
        let mut above = false;
        for k in 1..=n {
            let inc = self.increment(info, k)?;
            let next: Vec<f64> = (0..=n)
                .map(|i| cur[i] + inc.momentum * (cur[i] - prev[i]) + if i == k { inc.grad } else { 0.0 })
                .collect();
            prev = std::mem::replace(&mut cur, next);
            above = inc.above_mean;
        }
        Ok((cur, above))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub step: usize,
    pub f: f64,
    pub grad_sq: f64,
    /// ‖X_{k+1} − X_k‖.
    pub step_size: f64,
    /// Dimension of the span containing X_k.
    pub span_dim: usize,
    pub above_mean: bool,
    /// The gradient's orthogonal part was too small to extend the span.
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub dim: Dimension,
    pub digest: String,
    pub records: Vec<Record>,
}

fn pad(v: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    out.rows_mut(0, v.len().min(n)).copy_from(&v.rows(0, v.len().min(n)));
    out
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn prior_mean(kernel: &NonStationaryKernel, points: &[DVector<f64>], dirs: usize) -> DVector<f64> {
    let mut m = Vec::with_capacity(points.len() * (dirs + 1));
    for x in points {
        let t = 0.5 * x.norm_squared();
        m.push(kernel.mean_value(t));
        let slope = kernel.mean.derivative(t);
        m.extend((0..dirs).map(|i| slope * x[i]));
    }
    DVector::from_vec(m)
}

/// Simulation state in span coordinates.
#[derive(Debug, Clone)]
pub struct SpanState {
    pub dim: Dimension,
    pub span_dim: usize,
    pub kernel: NonStationaryKernel,
    pub scaling: Scaling,
    pub x0: DVector<f64>,
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    /// In-span coordinates of each observed gradient.
    pub grads: Vec<DVector<f64>>,
    frozen: Vec<bool>,
    span_dims: Vec<usize>,
    current: DVector<f64>,
    /// The current point has not been observed yet.
    pending: bool,
    seed: u64,
}

impl SpanState {
    /// Places X₀ = λv₀ (the origin when λ = 0) and observes it.
    pub fn init(
        kernel: NonStationaryKernel,
        scaling: Scaling,
        dim: Dimension,
        x0_norm: f64,
        seed: u64,
    ) -> Result<SpanState, SimError> {
        if !(x0_norm >= 0.0) || !x0_norm.is_finite() {
            return Err(SimError::Infeasible(format!("x0 norm {x0_norm}")));
        }
        match (dim, scaling) {
            (Dimension::Finite(d), _) if d < 2 => {
                return Err(SimError::Infeasible(format!("dimension {d} (need d ≥ 2)")))
            }
            (Dimension::Infinite, Scaling::Unit) => {
                return Err(SimError::Infeasible("d = inf requires inverse-dimension scaling".into()))
            }
            _ => {}
        }
        let span_dim = usize::from(x0_norm > 0.0);
        let x0 = DVector::from_element(span_dim, x0_norm);
        let mut st = SpanState {
            dim,
            span_dim,
            kernel,
            scaling,
            x0: x0.clone(),
            points: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            frozen: Vec::new(),
            span_dims: Vec::new(),
            current: x0,
            pending: true,
            seed,
        };
        st.observe()?;
        Ok(st)
    }

    pub fn asymptotic(&self) -> bool {
        self.dim == Dimension::Infinite
    }

    /// Variance multiplier of the in-span noise. Zero in asymptotic mode.
    fn noise_scale(&self) -> f64 {
        match self.dim {
            Dimension::Infinite => 0.0,
            Dimension::Finite(_) => self.scaling.factor(),
        }
    }

    fn observe(&mut self) -> Result<(), SimError> {
        let n = self.points.len();
        let dd = self.span_dim;
        let x = pad(&self.current, dd);
        let mut pts: Vec<DVector<f64>> = self.points.iter().map(|p| pad(p, dd)).collect();
        pts.push(x.clone());
        let basis: Vec<DVector<f64>> = (0..dd).map(|i| unit(dd, i)).collect();
        let dirs = vec![basis; n + 1];
        let cov = joint_cov_block(&self.kernel, &pts, &dirs, true, Scaling::Unit)?;
        let mean = prior_mean(&self.kernel, &pts, dd);
        let joint = JointGaussian::new(mean, cov).map_err(|e| self.psd(n, (n + 1) * (dd + 1), e))?;
        let observed: Vec<usize> = (0..n * (dd + 1)).collect();
        let mut obs_values = Vec::with_capacity(observed.len());
        for j in 0..n {
            obs_values.push(self.values[j]);
            let g = pad(&self.grads[j], dd);
            obs_values.extend(g.iter());
        }
        let post = condition(&joint, &observed, &obs_values).map_err(|e| self.psd(n, (n + 1) * (dd + 1), e))?;
        let z = normals(&mut stream_rng(self.seed, n, BLOCK_SPAN), dd + 1);
        let noise = &post.factor * DVector::from_vec(z) * self.noise_scale().sqrt();
        let block = &post.mean + noise;
        let f = block[0];
        let mut g: Vec<f64> = block.rows(1, dd).iter().cloned().collect();

        let ortho = self.orthogonal_norm(&pts, n)?;
        let room = match self.dim {
            Dimension::Finite(d) => dd < d,
            Dimension::Infinite => true,
        };
        let frozen = !(room && ortho > FREEZE_TOL);
        if !frozen {
            g.push(ortho);
            self.span_dim += 1;
        }
        self.points.push(x);
        self.values.push(f);
        self.grads.push(DVector::from_vec(g));
        self.frozen.push(frozen);
        self.span_dims.push(dd);
        self.pending = false;
        Ok(())
    }

    fn psd(&self, step: usize, rows: usize, source: GaussianError) -> SimError {
        SimError::NotPsd { step, rows, source }
    }

    /// ‖projection of ∇f(X_n) orthogonal to the span‖, sampled.
    fn orthogonal_norm(&self, pts: &[DVector<f64>], n: usize) -> Result<f64, SimError> {
        let dd = self.span_dim;
        let dof = match self.dim {
            Dimension::Finite(d) if d > dd => Some(d - dd),
            Dimension::Finite(_) => return Ok(0.0),
            Dimension::Infinite => None,
        };
        let ext: Vec<DVector<f64>> = pts.iter().map(|p| pad(p, dd + 1)).collect();
        let w = unit(dd + 1, dd);
        let dirs = vec![vec![w]; n + 1];
        let m = joint_cov_block(&self.kernel, &ext, &dirs, false, Scaling::Unit)?;
        let joint = JointGaussian::new(DVector::zeros(n + 1), m).map_err(|e| self.psd(n, n + 1, e))?;
        let obs: Vec<usize> = (0..n).collect();
        let post = condition(&joint, &obs, &vec![0.0; n]).map_err(|e| self.psd(n, n + 1, e))?;
        let sigma_w2 = post.cov[(0, 0)].max(0.0);
        Ok(match dof {
            Some(k) => {
                let chi = ChiSquared::new(k as f64).expect("positive degrees of freedom");
                let draw = chi.sample(&mut stream_rng(self.seed, n, BLOCK_ORTHO));
                (self.scaling.factor() * sigma_w2 * draw).sqrt()
            }
            None => sigma_w2.sqrt(),
        })
    }

    /// Span coordinates of the current point.
    pub fn current(&self) -> DVector<f64> {
        pad(&self.current, self.span_dim)
    }

    pub fn information(&self) -> Information {
        let dd = self.span_dim;
        let grads: Vec<DVector<f64>> = self.grads.iter().map(|g| pad(g, dd)).collect();
        Information::from_vectors(&pad(&self.x0, dd), &grads, &self.values)
    }

    /// Observes the current point if needed, moves to the next point and
    /// returns the record of the point just left.
    pub fn step(&mut self, gsa: &GradientSpanAlgorithm) -> Result<Record, SimError> {
        if self.pending {
            self.observe()?;
        }
        let n = self.points.len() - 1;
        let info = self.information();
        let (h, above_mean) = gsa.prefactors(&info)?;
        let dd = self.span_dim;
        let mut next = pad(&self.x0, dd) * h[0];
        for (k, g) in self.grads.iter().enumerate() {
            if h[k + 1] != 0.0 {
                next += pad(g, dd) * h[k + 1];
            }
        }
        let here = pad(&self.points[n], dd);
        let record = Record {
            step: n,
            f: self.values[n],
            grad_sq: self.grads[n].norm_squared(),
            step_size: (&next - &here).norm(),
            span_dim: self.span_dims[n],
            above_mean,
            frozen: self.frozen[n],
        };
        self.current = next;
        self.pending = true;
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub kernel: NonStationaryKernel,
    pub scaling: Scaling,
    pub dim: Dimension,
    pub x0_norm: f64,
    pub gsa: GradientSpanAlgorithm,
    pub n_steps: usize,
}

/// Runs the span simulator for `n_steps` iterations.
pub fn simulate(config: &SimConfig, seed: u64, digest: &str) -> Result<Trace, SimError> {
    let mut st = SpanState::init(config.kernel.clone(), config.scaling, config.dim, config.x0_norm, seed)?;
    let records = (0..config.n_steps).map(|_| st.step(&config.gsa)).collect::<Result<Vec<_>, _>>()?;
    Ok(Trace { seed, dim: config.dim, digest: digest.to_string(), records })
}

fn numeric_rank(vs: &[DVector<f64>]) -> usize {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        let mut r = v.clone();
        for b in &basis {
            r -= b * b.dot(&r);
        }
        let n = r.norm();
        if n > FREEZE_TOL * v.norm().max(1.0) {
            basis.push(r / n);
        }
    }
    basis.len()
}

/// Independent oracle: simulates in ambient coordinates with the full joint
/// covariance of every value and gradient component. Limited to d ≤ 6 and
/// at most 5 steps.
pub fn naive_simulate(config: &SimConfig, seed: u64, digest: &str) -> Result<Trace, SimError> {
    let d = match config.dim {
        Dimension::Finite(d) if (2..=6).contains(&d) => d,
        other => return Err(SimError::Infeasible(format!("naive simulator needs 2 ≤ d ≤ 6, got {other}"))),
    };
    if config.n_steps > 5 {
        return Err(SimError::Infeasible(format!("naive simulator runs at most 5 steps, got {}", config.n_steps)));
    }
    let kernel = &config.kernel;
    let x0 = unit(d, 0) * config.x0_norm;
    let basis: Vec<DVector<f64>> = (0..d).map(|i| unit(d, i)).collect();
    let mut points: Vec<DVector<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut grads: Vec<DVector<f64>> = Vec::new();
    let mut current = x0.clone();
    let mut records = Vec::new();
    for n in 0..config.n_steps {
        let mut pts = points.clone();
        pts.push(current.clone());
        let dirs = vec![basis.clone(); n + 1];
        let cov = joint_cov_block(kernel, &pts, &dirs, true, config.scaling)?;
        let mean = prior_mean(kernel, &pts, d);
        let rows = cov.nrows();
        let psd = |e| SimError::NotPsd { step: n, rows, source: e };
        let joint = JointGaussian::new(mean, cov).map_err(psd)?;
        let observed: Vec<usize> = (0..n * (d + 1)).collect();
        let mut obs = Vec::with_capacity(observed.len());
        for j in 0..n {
            obs.push(values[j]);
            obs.extend(grads[j].iter());
        }
        let post = condition(&joint, &observed, &obs).map_err(psd)?;
        let z = normals(&mut stream_rng(seed, n, BLOCK_NAIVE), d + 1);
        let block = &post.mean + &post.factor * DVector::from_vec(z);
        let span_dim = numeric_rank(&std::iter::once(x0.clone()).chain(grads.iter().cloned()).collect::<Vec<_>>());
        points.push(current.clone());
        values.push(block[0]);
        grads.push(block.rows(1, d).into_owned());

        let info = Information::from_vectors(&x0, &grads, &values);
        let (h, above_mean) = config.gsa.prefactors(&info)?;
        let mut next = &x0 * h[0];
        for (k, g) in grads.iter().enumerate() {
            next += g * h[k + 1];
        }
        records.push(Record {
            step: n,
            f: values[n],
            grad_sq: grads[n].norm_squared(),
            step_size: (&next - &current).norm(),
            span_dim,
            above_mean,
            frozen: false,
        });
        current = next;
    }
    Ok(Trace { seed, dim: config.dim, digest: digest.to_string(), records })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationRow {
    pub step: usize,
    pub mean_f: f64,
    pub var_f: f64,
    pub mean_grad_sq: f64,
    pub var_grad_sq: f64,
    pub n_seeds: usize,
}

/// Sample mean and unbiased variance, (mean, 0) for a single value.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Per-step mean and variance across seeds of f(X_k) and ‖∇f(X_k)‖².
pub fn concentration_stats(traces: &[Trace]) -> Result<Vec<ConcentrationRow>, SimError> {
    let first = traces.first().ok_or_else(|| SimError::MixedConfig("no traces".into()))?;
    for t in traces {
        if t.digest != first.digest || t.dim != first.dim {
            return Err(SimError::MixedConfig(format!(
                "digest {} (d={}) vs {} (d={})",
                t.digest, t.dim, first.digest, first.dim
            )));
        }
        if t.records.len() != first.records.len() {
            return Err(SimError::MixedConfig("traces of different lengths".into()));
        }
    }
    Ok((0..first.records.len())
        .map(|k| {
            let f: Vec<f64> = traces.iter().map(|t| t.records[k].f).collect();
            let g: Vec<f64> = traces.iter().map(|t| t.records[k].grad_sq).collect();
            let (mean_f, var_f) = mean_var(&f);
            let (mean_grad_sq, var_grad_sq) = mean_var(&g);
            ConcentrationRow { step: k, mean_f, var_f, mean_grad_sq, var_grad_sq, n_seeds: traces.len() }
        })
        .collect())
}

/// inf{n > 0 : ‖∇f(X_n)‖² ≤ ε} over the recorded steps.
pub fn halting_time(trace: &Trace, eps: f64) -> Option<usize> {
    trace.records.iter().skip(1).find(|r| r.grad_sq <= eps).map(|r| r.step)
}
