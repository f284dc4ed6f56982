//! Random Function Descent step sizes.
//!
//! Everything is expressed through the gradient cost quotient
//! Θ = ‖∇f‖/(μ − f). The step size η* minimizes
//! q_Θ(η) = −C(η²/2)/C(0) − η·C'(η²/2)/C'(0)·Θ.

use crate::kernels::{Family, StationaryKernel};
use crate::numerics::{bisect, golden_section, normal_ppf};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfdError {
    #[error("observation above the mean (f = {f_value}, mu = {mean})")]
    AboveMean { f_value: f64, mean: f64 },
    #[error("negative gradient cost quotient {0}")]
    NegativeTheta(f64),
    #[error("no interior minimum in [0, {upper}] (q(0) = {q_lo}, q(upper) = {q_hi})")]
    NoInteriorMinimum { upper: f64, q_lo: f64, q_hi: f64 },
    #[error("degenerate S-RFD denominator")]
    DegenerateNoise,
    #[error("confidence {0} outside [1/2, 1)")]
    InvalidConfidence(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("anisotropy matrix is not positive definite")]
    SingularAnisotropy,
}

/// Gradient cost quotient with an explicit infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Finite(f64),
    Infinite,
}

impl Theta {
    pub fn from_f64(x: f64) -> Theta {
        if x.is_infinite() && x > 0.0 {
            Theta::Infinite
        } else {
            Theta::Finite(x)
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Theta::Finite(x) => x,
            Theta::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Theta::Infinite)
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Finite(x) => write!(f, "{x}"),
            Theta::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    ClosedForm,
    Numeric1D,
    CubicRoot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub step_size: f64,
    /// η*/‖∇f‖; `None` without a gradient norm or when it is zero.
    pub learning_rate: Option<f64>,
    pub theta: Theta,
    pub solver: Solver,
    /// The observation was above the mean and Θ was clamped to ∞.
    pub above_mean: bool,
    /// The gradient was exactly zero; the step is 0.
    pub converged: bool,
    /// The conditional variance went negative from rounding and was clamped.
    pub variance_clamped: bool,
}

impl StepResult {
    fn new(step_size: f64, theta: Theta, solver: Solver) -> Self {
        StepResult {
            step_size,
            learning_rate: None,
            theta,
            solver,
            above_mean: false,
            converged: false,
            variance_clamped: false,
        }
    }

    fn with_grad_norm(mut self, grad_norm: f64) -> Self {
        if grad_norm > 0.0 {
            self.learning_rate = Some(self.step_size / grad_norm);
        } else {
            self.converged = true;
        }
        self
    }
}

/// Θ = ‖∇f‖/(μ − f). A zero gradient gives Θ = 0; f = μ gives ∞; f > μ is an
/// error for the caller to handle.
pub fn gradient_cost_quotient(f_value: f64, grad_norm: f64, mean: f64) -> Result<Theta, RfdError> {
    if !(grad_norm >= 0.0) {
        return Err(RfdError::InvalidInput(format!("gradient norm {grad_norm}")));
    }
    if grad_norm == 0.0 {
        return Ok(Theta::Finite(0.0));
    }
    let gap = mean - f_value;
    if gap < 0.0 {
        return Err(RfdError::AboveMean { f_value, mean });
    }
    if gap == 0.0 {
        return Ok(Theta::Infinite);
    }
    Ok(Theta::from_f64(grad_norm / gap))
}

/// The default above-mean policy: clamp Θ to ∞ and report the flag.
pub fn quotient_clamped(f_value: f64, grad_norm: f64, mean: f64) -> (Theta, bool) {
    match gradient_cost_quotient(f_value, grad_norm, mean) {
        Ok(t) => (t, false),
        Err(RfdError::AboveMean { .. }) => (Theta::Infinite, true),
        Err(_) => (Theta::Finite(0.0), false),
    }
}

fn check_theta(theta: Theta) -> Result<(), RfdError> {
    match theta {
        Theta::Finite(t) if !(t >= 0.0) => Err(RfdError::NegativeTheta(t)),
        _ => Ok(()),
    }
}

/// Root of −1 + c·t + (1+β)t² + c·t³ on [0, 1/√(1+β)] with c = √β/(sΘ).
fn rq_root(beta: f64, c: f64) -> f64 {
    let hi = 1.0 / (1.0 + beta).sqrt();
    if c == 0.0 {
        return hi;
    }
    let p = |t: f64| -1.0 + c * t + (1.0 + beta) * t * t + c * t * t * t;
    bisect(p, 0.0, hi).unwrap_or(hi)
}

/// Closed form η*(Θ) per family (bisection on the cubic for RQ).
pub fn step_size_closed(kernel: &StationaryKernel, theta: Theta) -> Result<StepResult, RfdError> {
    check_theta(theta)?;
    let s = kernel.s;
    if theta == Theta::Finite(0.0) {
        let solver = if kernel.family == Family::RationalQuadratic {
            Solver::CubicRoot
        } else {
            Solver::ClosedForm
        };
        return Ok(StepResult::new(0.0, theta, solver));
    }
    let inv = match theta {
        Theta::Finite(t) => 1.0 / t,
        Theta::Infinite => 0.0,
    };
    let (eta, solver) = match kernel.family {
        Family::SquaredExponential => {
            // η* = s²/(√(x² + s²) + x) with x = 1/(2Θ); no cancellation.
            let x = 0.5 * inv;
            (s * s / ((x * x + s * s).sqrt() + x), Solver::ClosedForm)
        }
        Family::Matern32 => {
            let r3 = 3f64.sqrt();
            (s / r3 / (1.0 + r3 * inv / s), Solver::ClosedForm)
        }
        Family::Matern52 => {
            let r5 = 5f64.sqrt();
            let a = 1.0 + r5 * inv / (3.0 * s);
            // (1−ζ) + √(4+(1+ζ)²) rewritten as 2 + 4/(√(4+a²)+a), a = 1+ζ.
            let num = 2.0 + 4.0 / ((4.0 + a * a).sqrt() + a);
            (s / r5 * num / (2.0 * a), Solver::ClosedForm)
        }
        Family::RationalQuadratic => {
            let b = kernel.beta;
            let c = b.sqrt() * inv / s;
            (s * b.sqrt() * rq_root(b, c), Solver::CubicRoot)
        }
    };
    Ok(StepResult::new(eta, theta, solver))
}

/// Naive SE formula √(x² + s²) − x, x = 1/(2Θ). Cancels badly for small Θ;
/// only kept as a reference.
pub fn se_step_unstable(s: f64, theta: f64) -> f64 {
    let x = 1.0 / (2.0 * theta);
    (x * x + s * s).sqrt() - x
}

/// Upper end of the search bracket for numeric minimization.
fn bracket(kernel: &StationaryKernel) -> f64 {
    let shape = if kernel.family == Family::RationalQuadratic { kernel.beta.sqrt() } else { 1.0 };
    10.0 * kernel.s * shape.max(1.0)
}

/// q_Θ(η) for finite Θ, or the rescaled −η·C'(η²/2)/C'(0) for Θ = ∞.
pub fn q_theta(kernel: &StationaryKernel, theta: Theta, eta: f64) -> f64 {
    let r = 0.5 * eta * eta;
    let (c0, d0) = (kernel.c(0.0), kernel.dc(0.0));
    match theta {
        Theta::Finite(t) => -kernel.c(r) / c0 - eta * kernel.dc(r) / d0 * t,
        Theta::Infinite => -eta * kernel.dc(r) / d0,
    }
}

/// dq/dη, used to polish the golden-section minimizer.
fn q_theta_slope(kernel: &StationaryKernel, theta: Theta, eta: f64) -> f64 {
    let r = 0.5 * eta * eta;
    let (c0, d0) = (kernel.c(0.0), kernel.dc(0.0));
    let dc = kernel.dc(r);
    let ddc = if eta == 0.0 { 0.0 } else { kernel.ddc(r) * eta * eta };
    let grad_term = -(dc + ddc) / d0;
    match theta {
        Theta::Finite(t) => -eta * dc / c0 + t * grad_term,
        Theta::Infinite => grad_term,
    }
}

/// Numeric η*: golden section on q_Θ over the bracket, then the first order
/// condition is solved by bisection around the golden-section estimate, since
/// q_Θ is too flat near its minimum to locate it to full precision from
/// function values alone.
pub fn step_size_numeric(kernel: &StationaryKernel, theta: Theta) -> Result<StepResult, RfdError> {
    check_theta(theta)?;
    if theta == Theta::Finite(0.0) {
        return Ok(StepResult::new(0.0, theta, Solver::Numeric1D));
    }
    let upper = bracket(kernel);
    let q = |eta: f64| q_theta(kernel, theta, eta);
    let eta = golden_section(q, 0.0, upper, 1e-10);
    if eta >= upper * (1.0 - 1e-6) {
        return Err(RfdError::NoInteriorMinimum { upper, q_lo: q(0.0), q_hi: q(upper) });
    }
    Ok(StepResult::new(polish(|e| q_theta_slope(kernel, theta, e), eta, upper), theta, Solver::Numeric1D))
}

/// Refines a minimizer estimate by bisection on the slope, widening the
/// bracket until the slope changes sign.
fn polish<F: Fn(f64) -> f64>(slope: F, eta: f64, upper: f64) -> f64 {
    let mut w = 1e-6 * eta.max(1e-12);
    for _ in 0..60 {
        let (lo, hi) = ((eta - w).max(0.0), (eta + w).min(upper));
        let (sl, sh) = (slope(lo), slope(hi));
        if sl <= 0.0 && sh >= 0.0 {
            return bisect(&slope, lo, hi).unwrap_or(eta);
        }
        if lo == 0.0 && hi == upper {
            break;
        }
        w *= 4.0;
    }
    eta
}

/// A-RFD step η̂ = C(0)/(−C'(0))·Θ.
pub fn arfd_step(kernel: &StationaryKernel, theta: f64) -> f64 {
    kernel.c(0.0) / (-kernel.dc(0.0)) * theta
}

/// Asymptotic learning rate h∞ = C(0)/(C'(0)(L∞ − μ)).
pub fn asymptotic_learning_rate(c0: f64, c0_prime: f64, terminal_loss: f64, mean: f64) -> f64 {
    c0 / (c0_prime * (terminal_loss - mean))
}

/// S-RFD asymptotic learning rate (C(0)+C_ε(0)/b)/((C'(0)+C_ε'(0)/b)(L∞ − μ)).
pub fn asymptotic_learning_rate_srfd(
    c0: f64,
    c0_prime: f64,
    noise_c0: f64,
    noise_c0_prime: f64,
    b: f64,
    terminal_loss: f64,
    mean: f64,
) -> f64 {
    (c0 + noise_c0 / b) / ((c0_prime + noise_c0_prime / b) * (terminal_loss - mean))
}

/// Noise-corrected quotient for mini-batch observations L = f + noise:
/// Θ' = [|C'(0)|/(|C'(0)| + |C_ε'(0)|/b)]·[(C(0) + C_ε(0)/b)/C(0)]·‖∇L‖/(μ − L).
pub fn srfd_quotient(
    kernel: &StationaryKernel,
    noise_c0: f64,
    noise_c0_prime_abs: f64,
    b: u64,
    f_obs: f64,
    grad_norm_obs: f64,
    mean: f64,
) -> Result<Theta, RfdError> {
    if b == 0 {
        return Err(RfdError::InvalidInput("batch size 0".into()));
    }
    let b = b as f64;
    let dc = kernel.dc(0.0).abs();
    let denom = dc + noise_c0_prime_abs.abs() / b;
    if denom == 0.0 {
        return Err(RfdError::DegenerateNoise);
    }
    let c0 = kernel.c(0.0);
    let factor = dc / denom * (c0 + noise_c0.abs() / b) / c0;
    match gradient_cost_quotient(f_obs, grad_norm_obs, mean)? {
        Theta::Finite(t) => Ok(Theta::Finite(factor * t)),
        Theta::Infinite => Ok(Theta::Infinite),
    }
}

/// Conditional variance σ²(η²) of f(w − d) given f(w), ∇f(w) with ‖d‖ = η.
pub fn conditional_variance(kernel: &StationaryKernel, eta: f64) -> f64 {
    let r = 0.5 * eta * eta;
    let (c0, d0) = (kernel.c(0.0), kernel.dc(0.0));
    let (c, dc) = (kernel.c(r), kernel.dc(r));
    c0 - c * c / c0 - dc * dc * eta * eta / (-d0)
}

/// γ-conservative step: minimizes the γ-quantile of f(w − η∇f/‖∇f‖).
pub fn conservative_step(
    kernel: &StationaryKernel,
    f_value: f64,
    grad_norm: f64,
    mean: f64,
    gamma: f64,
) -> Result<StepResult, RfdError> {
    if !(0.5..1.0).contains(&gamma) {
        return Err(RfdError::InvalidConfidence(gamma));
    }
    let (theta, above) = quotient_clamped(f_value, grad_norm, mean);
    if gamma == 0.5 || grad_norm == 0.0 {
        let mut r = step_size_numeric(kernel, theta)?.with_grad_norm(grad_norm);
        r.above_mean = above;
        return Ok(r);
    }
    let z = normal_ppf(gamma);
    let (c0, d0) = (kernel.c(0.0), kernel.dc(0.0));
    let clamped = std::cell::Cell::new(false);
    let objective = |eta: f64| {
        let r = 0.5 * eta * eta;
        let var = conditional_variance(kernel, eta);
        if var < 0.0 {
            clamped.set(true);
        }
        kernel.c(r) / c0 * (f_value - mean) - eta * kernel.dc(r) / d0 * grad_norm + z * var.max(0.0).sqrt()
    };
    let upper = bracket(kernel);
    let eta = golden_section(&objective, 0.0, upper, 1e-10);
    let mut r = StepResult::new(eta, theta, Solver::Numeric1D).with_grad_norm(grad_norm);
    r.above_mean = above;
    r.variance_clamped = clamped.get();
    Ok(r)
}

/// Direction Σ⁻¹∇/‖Σ⁻¹∇‖_Σ and step size η*(Θ) with Θ = ‖Σ⁻¹∇‖_Σ/(μ − f).
pub fn aniso_step(
    kernel: &StationaryKernel,
    sigma: &DMatrix<f64>,
    gradient: &DVector<f64>,
    f_value: f64,
    mean: f64,
) -> Result<(DVector<f64>, StepResult), RfdError> {
    if sigma.nrows() != gradient.len() || sigma.ncols() != gradient.len() {
        return Err(RfdError::InvalidInput("anisotropy shape".into()));
    }
    let ch = sigma.clone().cholesky().ok_or(RfdError::SingularAnisotropy)?;
    let u = ch.solve(gradient);
    let norm = u.dot(&(sigma * &u)).sqrt();
    if norm == 0.0 {
        return Err(RfdError::InvalidInput("zero gradient".into()));
    }
    let (theta, above) = quotient_clamped(f_value, norm, mean);
    let mut r = step_size_closed(kernel, theta)?.with_grad_norm(norm);
    r.above_mean = above;
    Ok((u / norm, r))
}

/// Noise description for S-RFD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub c0: f64,
    pub c0_prime_abs: f64,
    pub batch_size: u64,
}

/// All inputs of one RFD step.
#[derive(Debug, Clone)]
pub struct StepQuery {
    pub kernel: StationaryKernel,
    pub mean: f64,
    pub f_value: f64,
    pub grad_norm: f64,
    pub noise: Option<Noise>,
    pub confidence: Option<f64>,
    pub anisotropy: Option<DMatrix<f64>>,
}

impl StepQuery {
    pub fn new(kernel: StationaryKernel, mean: f64, f_value: f64, grad_norm: f64) -> Self {
        StepQuery { kernel, mean, f_value, grad_norm, noise: None, confidence: None, anisotropy: None }
    }

    /// Step size for the query. Noise selects S-RFD, a confidence above 1/2
    /// selects the conservative variant. Anisotropy is handled by
    /// [`aniso_step`], which needs the full gradient.
    pub fn solve(&self) -> Result<StepResult, RfdError> {
        if !(self.grad_norm >= 0.0) {
            return Err(RfdError::InvalidInput(format!("gradient norm {}", self.grad_norm)));
        }
        if let Some(g) = self.confidence {
            if g != 0.5 {
                return conservative_step(&self.kernel, self.f_value, self.grad_norm, self.mean, g);
            }
        }
        let (theta, above) = match self.noise {
            Some(n) => match srfd_quotient(
                &self.kernel,
                n.c0,
                n.c0_prime_abs,
                n.batch_size,
                self.f_value,
                self.grad_norm,
                self.mean,
            ) {
                Ok(t) => (t, false),
                Err(RfdError::AboveMean { .. }) => (Theta::Infinite, true),
                Err(e) => return Err(e),
            },
            None => quotient_clamped(self.f_value, self.grad_norm, self.mean),
        };
        let mut r = step_size_closed(&self.kernel, theta)?.with_grad_norm(self.grad_norm);
        r.above_mean = above;
        Ok(r)
    }
}
