//! Isotropic covariance models.
//!
//! Stationary kernels are written as C(r) with r = ‖x−y‖²/2 throughout, never
//! the distance. Non-stationary isotropic kernels are κ(λ₁, λ₂, λ₃) with
//! λ₁ = ‖x‖²/2, λ₂ = ‖y‖²/2, λ₃ = ⟨x,y⟩.

use crate::numerics::integrate_adaptive;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("argument {0} outside the kernel domain")]
    Domain(f64),
    #[error("unsupported derivative order {0}")]
    UnsupportedOrder(u8),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("quadrature did not converge (estimate {estimate}, residual {residual})")]
    Quadrature { estimate: f64, residual: f64 },
    #[error("points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("eigen solver failed")]
    Eigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    SquaredExponential,
    RationalQuadratic,
    Matern32,
    Matern52,
}

impl Family {
    pub const ALL: [Family; 4] =
        [Family::SquaredExponential, Family::RationalQuadratic, Family::Matern32, Family::Matern52];

    pub fn name(self) -> &'static str {
        match self {
            Family::SquaredExponential => "se",
            Family::RationalQuadratic => "rq",
            Family::Matern32 => "matern32",
            Family::Matern52 => "matern52",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s.to_ascii_lowercase().as_str() {
            "se" | "sqexp" | "squared_exponential" => Some(Family::SquaredExponential),
            "rq" | "rational_quadratic" => Some(Family::RationalQuadratic),
            "matern32" => Some(Family::Matern32),
            "matern52" => Some(Family::Matern52),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryKernel {
    pub family: Family,
    pub sigma2: f64,
    pub s: f64,
    /// Shape parameter, only read by the rational quadratic family.
    pub beta: f64,
}

impl StationaryKernel {
    pub fn new(family: Family, sigma2: f64, s: f64, beta: f64) -> Result<Self, KernelError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(sigma2) {
            return Err(KernelError::InvalidParameter(format!("variance {sigma2}")));
        }
        if !ok(s) {
            return Err(KernelError::InvalidParameter(format!("length scale {s}")));
        }
        if family == Family::RationalQuadratic && !ok(beta) {
            return Err(KernelError::InvalidParameter(format!("rq shape {beta}")));
        }
        Ok(StationaryKernel { family, sigma2, s, beta })
    }

    pub fn squared_exponential(sigma2: f64, s: f64) -> Self {
        Self::new(Family::SquaredExponential, sigma2, s, 1.0).expect("valid parameters")
    }

    pub fn rational_quadratic(sigma2: f64, s: f64, beta: f64) -> Self {
        Self::new(Family::RationalQuadratic, sigma2, s, beta).expect("valid parameters")
    }

    pub fn matern32(sigma2: f64, s: f64) -> Self {
        Self::new(Family::Matern32, sigma2, s, 1.0).expect("valid parameters")
    }

    pub fn matern52(sigma2: f64, s: f64) -> Self {
        Self::new(Family::Matern52, sigma2, s, 1.0).expect("valid parameters")
    }

    /// Same family and shape with a different variance.
    pub fn with_variance(&self, sigma2: f64) -> Self {
        StationaryKernel { sigma2, ..*self }
    }

    /// C(r), checked.
    pub fn cov(&self, r: f64) -> Result<f64, KernelError> {
        if !(r >= 0.0) {
            return Err(KernelError::Domain(r));
        }
        Ok(self.c(r))
    }

    /// C'(r) or C''(r), checked.
    pub fn cov_deriv(&self, order: u8, r: f64) -> Result<f64, KernelError> {
        if !(r >= 0.0) {
            return Err(KernelError::Domain(r));
        }
        match order {
            1 => Ok(self.dc(r)),
            2 => Ok(self.ddc(r)),
            o => Err(KernelError::UnsupportedOrder(o)),
        }
    }

    /// C(r). Negative r from rounding is clamped to 0.
    pub fn c(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        let (v, s) = (self.sigma2, self.s);
        match self.family {
            Family::SquaredExponential => v * (-r / (s * s)).exp(),
            Family::RationalQuadratic => {
                v * (1.0 + 2.0 * r / (self.beta * s * s)).powf(-self.beta / 2.0)
            }
            Family::Matern32 => {
                let a = 3f64.sqrt() * (2.0 * r).sqrt() / s;
                v * (1.0 + a) * (-a).exp()
            }
            Family::Matern52 => {
                let a = 5f64.sqrt() * (2.0 * r).sqrt() / s;
                v * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }

    /// C'(r).
    pub fn dc(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        let (v, s) = (self.sigma2, self.s);
        let s2 = s * s;
        match self.family {
            Family::SquaredExponential => -v / s2 * (-r / s2).exp(),
            Family::RationalQuadratic => {
                -v / s2 * (1.0 + 2.0 * r / (self.beta * s2)).powf(-self.beta / 2.0 - 1.0)
            }
            Family::Matern32 => {
                let a = 3f64.sqrt() * (2.0 * r).sqrt() / s;
                -v * 3.0 / s2 * (-a).exp()
            }
            Family::Matern52 => {
                let a = 5f64.sqrt() * (2.0 * r).sqrt() / s;
                -v * 5.0 / (3.0 * s2) * (1.0 + a) * (-a).exp()
            }
        }
    }

    /// C''(r). Infinite at r = 0 for Matern32.
    pub fn ddc(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        let (v, s) = (self.sigma2, self.s);
        let s2 = s * s;
        match self.family {
            Family::SquaredExponential => v / (s2 * s2) * (-r / s2).exp(),
            Family::RationalQuadratic => {
                let b = self.beta;
                v * (b + 2.0) / (b * s2 * s2) * (1.0 + 2.0 * r / (b * s2)).powf(-b / 2.0 - 2.0)
            }
            Family::Matern32 => {
                let eta = (2.0 * r).sqrt();
                if eta == 0.0 {
                    return f64::INFINITY;
                }
                let a = 3f64.sqrt() * eta / s;
                v * 3.0 * 3f64.sqrt() / (s2 * s) * (-a).exp() / eta
            }
            Family::Matern52 => {
                let a = 5f64.sqrt() * (2.0 * r).sqrt() / s;
                v * 25.0 / (3.0 * s2 * s2) * (-a).exp()
            }
        }
    }
}

/// Mean function μ(t) of the half squared norm t = ‖x‖²/2, as a polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFn {
    /// Coefficients c_k of μ(t) = Σ c_k t^k.
    pub coeffs: Vec<f64>,
}

impl MeanFn {
    pub fn constant(c: f64) -> Self {
        MeanFn { coeffs: vec![c] }
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        MeanFn { coeffs }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&c| c == 0.0)
    }
}

/// First and second partial derivatives of κ(λ₁, λ₂, λ₃).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KappaPartials {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k12: f64,
    pub k13: f64,
    pub k23: f64,
    pub k33: f64,
}

/// A user supplied κ with its partial derivatives.
pub trait Kappa: Send + Sync + fmt::Debug {
    fn value(&self, l1: f64, l2: f64, l3: f64) -> f64;
    fn partials(&self, l1: f64, l2: f64, l3: f64) -> KappaPartials;
}

#[derive(Debug, Clone)]
pub enum KappaForm {
    /// κ(λ₁,λ₂,λ₃) = C(λ₁+λ₂−λ₃).
    Stationary(StationaryKernel),
    /// κ = σ_b² + σ_w² λ₃.
    Linear { bias: f64, weight: f64 },
    /// κ = (σ_b² + σ_w² λ₃)^p.
    DotProductPower { bias: f64, weight: f64, power: u32 },
    Custom(Arc<dyn Kappa>),
}

#[derive(Debug, Clone)]
pub struct NonStationaryKernel {
    pub form: KappaForm,
    pub mean: MeanFn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    Unit,
    InverseDimension(usize),
}

impl Scaling {
    pub fn factor(self) -> f64 {
        match self {
            Scaling::Unit => 1.0,
            Scaling::InverseDimension(d) => 1.0 / d.max(1) as f64,
        }
    }
}

impl NonStationaryKernel {
    pub fn stationary(kernel: StationaryKernel, mean: f64) -> Self {
        NonStationaryKernel { form: KappaForm::Stationary(kernel), mean: MeanFn::constant(mean) }
    }

    pub fn linear(bias: f64, weight: f64, mean: MeanFn) -> Self {
        NonStationaryKernel { form: KappaForm::Linear { bias, weight }, mean }
    }

    pub fn dot_product_power(bias: f64, weight: f64, power: u32, mean: MeanFn) -> Self {
        NonStationaryKernel { form: KappaForm::DotProductPower { bias, weight, power }, mean }
    }

    pub fn custom(kappa: Arc<dyn Kappa>, mean: MeanFn) -> Self {
        NonStationaryKernel { form: KappaForm::Custom(kappa), mean }
    }

    pub fn as_stationary(&self) -> Option<&StationaryKernel> {
        match &self.form {
            KappaForm::Stationary(k) => Some(k),
            _ => None,
        }
    }

    pub fn in_domain(l1: f64, l2: f64, l3: f64) -> bool {
        l1 >= 0.0 && l2 >= 0.0 && l3.abs() <= 2.0 * (l1 * l2).sqrt() * (1.0 + 1e-12) + 1e-300
    }

    pub fn kappa(&self, l1: f64, l2: f64, l3: f64) -> f64 {
        match &self.form {
            KappaForm::Stationary(k) => k.c(l1 + l2 - l3),
            KappaForm::Linear { bias, weight } => bias + weight * l3,
            KappaForm::DotProductPower { bias, weight, power } => {
                (bias + weight * l3).powi(*power as i32)
            }
            KappaForm::Custom(k) => k.value(l1, l2, l3),
        }
    }

    pub fn partials(&self, l1: f64, l2: f64, l3: f64) -> KappaPartials {
        match &self.form {
            KappaForm::Stationary(k) => {
                let u = l1 + l2 - l3;
                let (d1, d2) = (k.dc(u), k.ddc(u));
                KappaPartials { k1: d1, k2: d1, k3: -d1, k12: d2, k13: -d2, k23: -d2, k33: d2 }
            }
            KappaForm::Linear { weight, .. } => KappaPartials { k3: *weight, ..Default::default() },
            KappaForm::DotProductPower { bias, weight, power } => {
                let p = *power as i32;
                let base = bias + weight * l3;
                let k3 = if p >= 1 { p as f64 * weight * base.powi(p - 1) } else { 0.0 };
                let k33 =
                    if p >= 2 { (p * (p - 1)) as f64 * weight * weight * base.powi(p - 2) } else { 0.0 };
                KappaPartials { k3, k33, ..Default::default() }
            }
            KappaForm::Custom(k) => k.partials(l1, l2, l3),
        }
    }

    /// μ at half squared norm t = ‖x‖²/2.
    pub fn mean_value(&self, half_sq_norm: f64) -> f64 {
        self.mean.value(half_sq_norm)
    }

    /// E[∇f(x)] = μ'(‖x‖²/2)·x.
    pub fn grad_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.mean.derivative(0.5 * x.norm_squared())
    }

    /// Covariance of two jointly Gaussian entries, each either f(x) (direction
    /// `None`) or D_v f(x), at unit scaling.
    pub fn cov_entry(
        &self,
        x: &DVector<f64>,
        v: Option<&DVector<f64>>,
        y: &DVector<f64>,
        w: Option<&DVector<f64>>,
    ) -> f64 {
        if let KappaForm::Stationary(k) = &self.form {
            return stationary_entry(k, x, v, y, w);
        }
        let (l1, l2, l3) = (0.5 * x.norm_squared(), 0.5 * y.norm_squared(), x.dot(y));
        match (v, w) {
            (None, None) => self.kappa(l1, l2, l3),
            (Some(v), None) => {
                let p = self.partials(l1, l2, l3);
                p.k1 * x.dot(v) + p.k3 * y.dot(v)
            }
            (None, Some(w)) => {
                let p = self.partials(l1, l2, l3);
                p.k2 * y.dot(w) + p.k3 * x.dot(w)
            }
            (Some(v), Some(w)) => {
                let p = self.partials(l1, l2, l3);
                let (xv, xw, yv, yw, vw) = (x.dot(v), x.dot(w), y.dot(v), y.dot(w), v.dot(w));
                p.k12 * xv * yw + p.k13 * xv * xw + p.k23 * yv * yw + p.k33 * xw * yv + p.k3 * vw
            }
        }
    }
}

/// Stationary entries written in Δ = x − y. The C'' term carries the factor
/// ⟨Δ,v⟩⟨Δ,w⟩ and is skipped when that is zero, where Matern32's C'' is
/// singular.
fn stationary_entry(
    k: &StationaryKernel,
    x: &DVector<f64>,
    v: Option<&DVector<f64>>,
    y: &DVector<f64>,
    w: Option<&DVector<f64>>,
) -> f64 {
    let delta = x - y;
    let u = 0.5 * delta.norm_squared();
    match (v, w) {
        (None, None) => k.c(u),
        (Some(v), None) => k.dc(u) * delta.dot(v),
        (None, Some(w)) => -k.dc(u) * delta.dot(w),
        (Some(v), Some(w)) => {
            let coef = delta.dot(v) * delta.dot(w);
            let second = if coef == 0.0 { 0.0 } else { k.ddc(u) * coef };
            -(second + k.dc(u) * v.dot(w))
        }
    }
}

/// A point together with the directional derivatives requested at it.
fn entries<'a>(
    points: &'a [DVector<f64>],
    directions: &'a [Vec<DVector<f64>>],
    include_values: bool,
) -> Vec<(&'a DVector<f64>, Option<&'a DVector<f64>>)> {
    let mut out = Vec::new();
    for (i, x) in points.iter().enumerate() {
        if include_values {
            out.push((x, None));
        }
        if let Some(ds) = directions.get(i) {
            for v in ds {
                out.push((x, Some(v)));
            }
        }
    }
    out
}

fn check_dims(
    points: &[DVector<f64>],
    directions: &[Vec<DVector<f64>>],
) -> Result<(), KernelError> {
    let dim = points.first().map(|p| p.len()).unwrap_or(0);
    for p in points {
        if p.len() != dim {
            return Err(KernelError::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    if directions.len() > points.len() {
        return Err(KernelError::DimensionMismatch { expected: points.len(), got: directions.len() });
    }
    for ds in directions {
        for v in ds {
            if v.len() != dim {
                return Err(KernelError::DimensionMismatch { expected: dim, got: v.len() });
            }
        }
    }
    Ok(())
}

/// Covariance matrix of (f(xᵢ), D_v f(xᵢ) for each requested v), grouped per
/// point in input order. `directions` may be shorter than `points`.
pub fn joint_cov_block(
    kernel: &NonStationaryKernel,
    points: &[DVector<f64>],
    directions: &[Vec<DVector<f64>>],
    include_values: bool,
    scaling: Scaling,
) -> Result<DMatrix<f64>, KernelError> {
    check_dims(points, directions)?;
    let e = entries(points, directions, include_values);
    let n = e.len();
    let scale = scaling.factor();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = scale * kernel.cov_entry(e[i].0, e[i].1, e[j].0, e[j].1);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(m)
}

/// Cross covariance between two entry lists built like `joint_cov_block`.
pub fn cross_cov_block(
    kernel: &NonStationaryKernel,
    points_a: &[DVector<f64>],
    directions_a: &[Vec<DVector<f64>>],
    values_a: bool,
    points_b: &[DVector<f64>],
    directions_b: &[Vec<DVector<f64>>],
    values_b: bool,
    scaling: Scaling,
) -> Result<DMatrix<f64>, KernelError> {
    check_dims(points_a, directions_a)?;
    check_dims(points_b, directions_b)?;
    if let (Some(a), Some(b)) = (points_a.first(), points_b.first()) {
        if a.len() != b.len() {
            return Err(KernelError::DimensionMismatch { expected: a.len(), got: b.len() });
        }
    }
    let ea = entries(points_a, directions_a, values_a);
    let eb = entries(points_b, directions_b, values_b);
    let scale = scaling.factor();
    Ok(DMatrix::from_fn(ea.len(), eb.len(), |i, j| {
        scale * kernel.cov_entry(ea[i].0, ea[i].1, eb[j].0, eb[j].1)
    }))
}

/// Normalized Gegenbauer polynomial P̄ₙ(t) for ambient dimension d
/// (index (d−2)/2, P̄ₙ(1) = 1). `None` selects the d = ∞ limit tⁿ.
pub fn gegenbauer_normalized(n: usize, d: Option<usize>, t: f64) -> f64 {
    let Some(d) = d else {
        return t.powi(n as i32);
    };
    let lam = (d as f64 - 2.0) / 2.0;
    if n == 0 {
        return 1.0;
    }
    let (mut p0, mut p1) = (1.0, t);
    for k in 2..=n {
        let k = k as f64;
        let p2 = (2.0 * (k + lam - 1.0) * t * p1 - (k - 1.0) * p0) / (k + 2.0 * lam - 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Schoenberg coefficient α_n^{(d)}(r, s) of κ expanded in normalized
/// Gegenbauer polynomials of ρ = ⟨x,y⟩/(rs), with r = ‖x‖, s = ‖y‖.
pub fn schoenberg_alpha(
    kernel: &NonStationaryKernel,
    n: usize,
    d: usize,
    r: f64,
    s: f64,
) -> Result<f64, KernelError> {
    if d < 2 {
        return Err(KernelError::InvalidParameter(format!("dimension {d}")));
    }
    if !(r >= 0.0 && s >= 0.0) {
        return Err(KernelError::Domain(r.min(s)));
    }
    let (l1, l2) = (0.5 * r * r, 0.5 * s * s);
    let weight = |th: f64| th.sin().powi(d as i32 - 2);
    let tol = 1e-10;
    let q = |e: crate::numerics::QuadratureFailure| KernelError::Quadrature {
        estimate: e.estimate,
        residual: e.residual,
    };
    let pi = std::f64::consts::PI;
    let norm = integrate_adaptive(
        |th| gegenbauer_normalized(n, Some(d), th.cos()).powi(2) * weight(th),
        0.0,
        pi,
        tol,
    )
    .map_err(q)?;
    let num = integrate_adaptive(
        |th| {
            let rho = th.cos();
            kernel.kappa(l1, l2, r * s * rho) * gegenbauer_normalized(n, Some(d), rho) * weight(th)
        },
        0.0,
        pi,
        tol,
    )
    .map_err(q)?;
    Ok(num / norm)
}

/// Smallest eigenvalue of the joint covariance of values (and full gradients
/// when requested) at distinct points.
pub fn min_eigen_check(
    kernel: &NonStationaryKernel,
    points: &[DVector<f64>],
    with_gradients: bool,
) -> Result<f64, KernelError> {
    for i in 0..points.len() {
        for j in 0..i {
            if (&points[i] - &points[j]).norm() == 0.0 {
                return Err(KernelError::DuplicatePoint(j, i));
            }
        }
    }
    let dim = points.first().map(|p| p.len()).unwrap_or(0);
    let dirs: Vec<Vec<DVector<f64>>> = if with_gradients {
        points.iter().map(|_| (0..dim).map(|k| DVector::from_fn(dim, |i, _| (i == k) as u8 as f64)).collect()).collect()
    } else {
        Vec::new()
    };
    let m = joint_cov_block(kernel, points, &dirs, true, Scaling::Unit)?;
    if m.nrows() == 0 {
        return Err(KernelError::Eigen);
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or(KernelError::Eigen)?;
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_derivatives_at_zero() {
        let s = 1.7;
        assert!((StationaryKernel::squared_exponential(1.0, s).dc(0.0) + 1.0 / (s * s)).abs() < 1e-15);
        assert!((StationaryKernel::matern32(1.0, s).dc(0.0) + 3.0 / (s * s)).abs() < 1e-15);
        assert!((StationaryKernel::matern52(1.0, s).dc(0.0) + 5.0 / (3.0 * s * s)).abs() < 1e-15);
        assert!((StationaryKernel::rational_quadratic(1.0, s, 2.5).dc(0.0) + 1.0 / (s * s)).abs() < 1e-15);
        assert!(StationaryKernel::matern32(1.0, s).ddc(0.0).is_infinite());
    }

    #[test]
    fn mean_polynomial() {
        let m = MeanFn::polynomial(vec![0.0, 0.0, 1.0]);
        assert_eq!(m.value(2.0), 4.0);
        assert_eq!(m.derivative(2.0), 4.0);
        assert!(MeanFn::constant(3.0).is_constant());
    }

    #[test]
    fn gegenbauer_d3_is_legendre() {
        let t = 0.37;
        let p3 = 0.5 * (5.0 * t * t * t - 3.0 * t);
        assert!((gegenbauer_normalized(3, Some(3), t) - p3).abs() < 1e-15);
        // d = 2 gives Chebyshev polynomials
        assert!((gegenbauer_normalized(4, Some(2), t) - (4.0 * t.acos()).cos()).abs() < 1e-14);
    }
}
