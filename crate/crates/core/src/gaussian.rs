//! Multivariate normal conditioning and sampling.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("matrix is not positive definite (pivot {pivot}, jitter {jitter:e})")]
    NotPositiveDefinite { pivot: usize, jitter: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid observed index {0}")]
    InvalidIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterPolicy {
    None,
    Escalating,
}

#[derive(Debug, Clone)]
pub struct Cholesky {
    pub factor: DMatrix<f64>,
    /// Diagonal jitter that was added (0 when the plain factorization worked).
    pub jitter: f64,
}

impl Cholesky {
    pub fn rank_deficient(&self) -> bool {
        self.jitter > 0.0
    }

    /// Solves L y = b in place.
    pub fn solve_lower(&self, b: &mut DMatrix<f64>) {
        let l = &self.factor;
        let n = l.nrows();
        for c in 0..b.ncols() {
            for i in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
        }
    }

    /// Solves Lᵀ y = b in place.
    pub fn solve_upper(&self, b: &mut DMatrix<f64>) {
        let l = &self.factor;
        let n = l.nrows();
        for c in 0..b.ncols() {
            for i in (0..n).rev() {
                let mut s = b[(i, c)];
                for k in i + 1..n {
                    s -= l[(k, i)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
        }
    }

    /// Solves A x = b with A = L Lᵀ.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_lower(&mut x);
        self.solve_upper(&mut x);
        x
    }
}

fn factorize(a: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs() / scale);
        }
    }
    worst
}

/// Lower Cholesky factor. The escalating policy retries with diagonal jitter
/// 1e-12·trace, growing ×10 per retry, at most 4 retries.
pub fn cholesky(a: &DMatrix<f64>, policy: JitterPolicy) -> Result<Cholesky, GaussianError> {
    cholesky_with_scale(a, policy, a.trace().abs())
}

/// As [`cholesky`], with the jitter measured against `scale` instead of the
/// trace of `a`. Used for conditional covariances, which can cancel to zero.
pub fn cholesky_with_scale(
    a: &DMatrix<f64>,
    policy: JitterPolicy,
    scale: f64,
) -> Result<Cholesky, GaussianError> {
    if a.nrows() != a.ncols() {
        return Err(GaussianError::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    let asym = max_asymmetry(a);
    if asym > 1e-10 {
        return Err(GaussianError::NotSymmetric(asym));
    }
    let mut pivot = match factorize(a, 0.0) {
        Ok(factor) => return Ok(Cholesky { factor, jitter: 0.0 }),
        Err(p) => p,
    };
    if policy == JitterPolicy::None {
        return Err(GaussianError::NotPositiveDefinite { pivot, jitter: 0.0 });
    }
    let mut jitter = 1e-12 * scale.max(f64::MIN_POSITIVE * 1e12);
    for _ in 0..4 {
        match factorize(a, jitter) {
            Ok(factor) => return Ok(Cholesky { factor, jitter }),
            Err(p) => pivot = p,
        }
        jitter *= 10.0;
    }
    Err(GaussianError::NotPositiveDefinite { pivot, jitter: jitter / 10.0 })
}

#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, GaussianError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(GaussianError::DimensionMismatch { expected: mean.len(), got: cov.nrows() });
        }
        let asym = max_asymmetry(&cov);
        if asym > 1e-12 {
            return Err(GaussianError::NotSymmetric(asym));
        }
        Ok(JointGaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub factor: DMatrix<f64>,
    /// Conditional covariance Σ₂|₁ before factorization.
    pub cov: DMatrix<f64>,
    /// Indices of the original vector that make up this block, in order.
    pub indices: Vec<usize>,
    pub rank_deficient: bool,
    /// Largest jitter used by either factorization.
    pub jitter: f64,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Conditional law of the unobserved block given X[observed] = values.
pub fn condition(
    joint: &JointGaussian,
    observed: &[usize],
    values: &[f64],
) -> Result<GaussianPosterior, GaussianError> {
    let n = joint.dim();
    if observed.len() != values.len() {
        return Err(GaussianError::DimensionMismatch { expected: observed.len(), got: values.len() });
    }
    let mut pairs: Vec<(usize, f64)> = observed.iter().cloned().zip(values.iter().cloned()).collect();
    pairs.sort_by_key(|p| p.0);
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(GaussianError::InvalidIndex(w[1].0));
        }
    }
    if let Some(&(i, _)) = pairs.iter().find(|p| p.0 >= n) {
        return Err(GaussianError::InvalidIndex(i));
    }
    let obs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let free: Vec<usize> = (0..n).filter(|i| obs.binary_search(i).is_err()).collect();
    let (m, k) = (obs.len(), free.len());

    let s11 = DMatrix::from_fn(m, m, |i, j| joint.cov[(obs[i], obs[j])]);
    let s12 = DMatrix::from_fn(m, k, |i, j| joint.cov[(obs[i], free[j])]);
    let s22 = DMatrix::from_fn(k, k, |i, j| joint.cov[(free[i], free[j])]);
    let resid = DMatrix::from_fn(m, 1, |i, _| pairs[i].1 - joint.mean[obs[i]]);
    let mu2 = DVector::from_fn(k, |i, _| joint.mean[free[i]]);

    let (mean, cov, j1) = if m == 0 {
        (mu2, s22, 0.0)
    } else {
        let ch = cholesky(&s11, JitterPolicy::Escalating)?;
        let mut a = s12.clone();
        ch.solve_lower(&mut a);
        let mut r = resid;
        ch.solve_lower(&mut r);
        let mean = mu2 + (a.transpose() * r).column(0);
        let mut cov = s22 - a.transpose() * &a;
        cov = 0.5 * (&cov + cov.transpose());
        (mean, cov, ch.jitter)
    };
    let (factor, j2) = if k == 0 {
        (DMatrix::zeros(0, 0), 0.0)
    } else {
        let prior_scale = (0..k).map(|i| joint.cov[(free[i], free[i])].abs()).sum::<f64>();
        let ch = cholesky_with_scale(&cov, JitterPolicy::Escalating, prior_scale)?;
        (ch.factor, ch.jitter)
    };
    Ok(GaussianPosterior {
        mean,
        factor,
        cov,
        indices: free,
        rank_deficient: j1 > 0.0 || j2 > 0.0,
        jitter: j1.max(j2),
    })
}

/// mean + factor·z.
pub fn sample(posterior: &GaussianPosterior, z: &[f64]) -> Result<DVector<f64>, GaussianError> {
    if z.len() != posterior.dim() {
        return Err(GaussianError::DimensionMismatch { expected: posterior.dim(), got: z.len() });
    }
    let z = DVector::from_column_slice(z);
    Ok(&posterior.mean + &posterior.factor * z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cholesky() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let c = cholesky(&a, JitterPolicy::None).unwrap();
        assert_eq!(c.factor, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]));
        assert_eq!(c.jitter, 0.0);
    }

    #[test]
    fn singular_needs_jitter() {
        let a = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            cholesky(&a, JitterPolicy::None),
            Err(GaussianError::NotPositiveDefinite { pivot: 1, .. })
        ));
        let c = cholesky(&a, JitterPolicy::Escalating).unwrap();
        assert!(c.rank_deficient() && c.jitter > 0.0);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]);
        match cholesky(&a, JitterPolicy::Escalating) {
            Err(GaussianError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bivariate_condition() {
        let rho = 0.6;
        let j = JointGaussian::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        )
        .unwrap();
        let p = condition(&j, &[0], &[1.5]).unwrap();
        assert!((p.mean[0] - rho * 1.5).abs() < 1e-15);
        assert!((p.cov[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-15);
        let prior = condition(&j, &[], &[]).unwrap();
        assert_eq!(prior.cov, j.cov);
    }

    #[test]
    fn sample_scales_by_factor() {
        let j = JointGaussian::new(DVector::zeros(1), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let p = condition(&j, &[], &[]).unwrap();
        assert_eq!(sample(&p, &[1.0]).unwrap()[0], 2.0);
        assert_eq!(sample(&p, &[0.0]).unwrap()[0], 0.0);
        assert!(sample(&p, &[0.0, 1.0]).is_err());
    }
}
