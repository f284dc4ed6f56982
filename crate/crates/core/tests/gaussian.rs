use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rfdlab_core::gaussian::*;

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2
}

#[test]
fn cholesky_examples() {
    let c = cholesky(&DMatrix::identity(3, 3), JitterPolicy::None).unwrap();
    assert_eq!(c.factor, DMatrix::identity(3, 3));
    assert_eq!(c.jitter, 0.0);

    let c = cholesky(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]), JitterPolicy::None).unwrap();
    assert!((c.factor - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0])).norm() < 1e-15);

    let ones = DMatrix::from_element(2, 2, 1.0);
    assert!(matches!(cholesky(&ones, JitterPolicy::None), Err(GaussianError::NotPositiveDefinite { .. })));
    let c = cholesky(&ones, JitterPolicy::Escalating).unwrap();
    assert!(c.jitter > 0.0 && c.rank_deficient());
    assert!((&c.factor * c.factor.transpose() - ones).norm() < 1e-8);
}

#[test]
fn cholesky_rejects_indefinite_and_asymmetric() {
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(
        cholesky(&bad, JitterPolicy::Escalating),
        Err(GaussianError::NotPositiveDefinite { pivot: 1, .. })
    ));
    assert!(JointGaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0])).is_err());
    assert!(JointGaussian::new(DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
}

#[test]
fn bivariate_conditioning() {
    for rho in [-0.8, 0.0, 0.3, 0.95] {
        let j = JointGaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap();
        let p = condition(&j, &[0], &[1.7]).unwrap();
        assert_eq!(p.indices, vec![1]);
        assert!((p.mean[0] - rho * 1.7).abs() < 1e-14);
        assert!((p.cov[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-14);
    }
}

#[test]
fn empty_observation_is_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cov = random_spd(4, &mut rng);
    let mean = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let j = JointGaussian::new(mean.clone(), cov.clone()).unwrap();
    let p = condition(&j, &[], &[]).unwrap();
    assert_eq!(p.mean, mean);
    assert!((p.cov - cov).norm() < 1e-14);
}

#[test]
fn invalid_inputs() {
    let j = JointGaussian::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    assert!(matches!(condition(&j, &[5], &[0.0]), Err(GaussianError::InvalidIndex(5))));
    assert!(condition(&j, &[0], &[]).is_err());
    let p = condition(&j, &[0], &[0.0]).unwrap();
    assert!(matches!(sample(&p, &[0.0, 1.0]), Err(GaussianError::DimensionMismatch { .. })));
}

#[test]
fn sample_examples() {
    let j = JointGaussian::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]))
        .unwrap();
    let p = condition(&j, &[0], &[3.0]).unwrap();
    assert_eq!(sample(&p, &[0.0]).unwrap(), p.mean);
    assert!((sample(&p, &[1.0]).unwrap()[0] - 2.0).abs() < 1e-15);
}

#[test]
fn factor_reconstructs_conditional_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 2..=8 {
        let j = JointGaussian::new(DVector::zeros(n), random_spd(n, &mut rng)).unwrap();
        let p = condition(&j, &[0], &[0.4]).unwrap();
        let rec = &p.factor * p.factor.transpose();
        assert!((rec - &p.cov).norm() <= 1e-10 * p.cov.norm());
        for i in 0..p.dim() {
            assert!(p.cov[(i, i)] <= j.cov[(i + 1, i + 1)] + 1e-10);
        }
    }
}

#[test]
fn observation_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let j = JointGaussian::new(DVector::from_fn(6, |i, _| i as f64), random_spd(6, &mut rng)).unwrap();
    let a = condition(&j, &[1, 4, 2], &[0.5, -1.0, 2.0]).unwrap();
    let b = condition(&j, &[4, 2, 1], &[-1.0, 2.0, 0.5]).unwrap();
    assert_eq!(a.indices, b.indices);
    assert!((&a.mean - &b.mean).norm() < 1e-12);
    assert!((&a.cov - &b.cov).norm() < 1e-12);
}

#[test]
fn sample_moments_match_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let j = JointGaussian::new(DVector::zeros(5), random_spd(5, &mut rng)).unwrap();
    let p = condition(&j, &[0, 3], &[1.0, -0.5]).unwrap();
    let n = 100_000;
    let k = p.dim();
    let draws: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            sample(&p, &z).unwrap()
        })
        .collect();
    let mean = draws.iter().fold(DVector::zeros(k), |a, x| a + x) / n as f64;
    for i in 0..k {
        let se = (p.cov[(i, i)] / n as f64).sqrt();
        assert!((mean[i] - p.mean[i]).abs() < 4.0 * se);
        for l in 0..k {
            let emp = draws.iter().map(|x| (x[i] - mean[i]) * (x[l] - mean[l])).sum::<f64>() / (n - 1) as f64;
            let var = p.cov[(i, i)] * p.cov[(l, l)] + p.cov[(i, l)].powi(2);
            assert!((emp - p.cov[(i, l)]).abs() < 4.0 * (var / n as f64).sqrt(), "({i},{l})");
        }
    }
}

#[test]
fn conditioning_then_sampling_recovers_joint_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 6;
    let cov = random_spd(n, &mut rng);
    let mean = DVector::from_fn(n, |i, _| 0.3 * i as f64);
    let j = JointGaussian::new(mean.clone(), cov.clone()).unwrap();
    let obs = [0usize, 2];
    let marginal = DMatrix::from_fn(2, 2, |a, b| cov[(obs[a], obs[b])]);
    let mch = cholesky(&marginal, JitterPolicy::None).unwrap();
    let reps = 100_000;
    let mut xs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let z: DVector<f64> = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
        let a = &mch.factor * z + DVector::from_vec(vec![mean[0], mean[2]]);
        let p = condition(&j, &obs, a.as_slice()).unwrap();
        let z: Vec<f64> = (0..p.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b = sample(&p, &z).unwrap();
        let mut full = DVector::zeros(n);
        full[0] = a[0];
        full[2] = a[1];
        for (k, &i) in p.indices.iter().enumerate() {
            full[i] = b[k];
        }
        xs.push(full);
    }
    let m = xs.iter().fold(DVector::zeros(n), |acc, x| acc + x) / reps as f64;
    for i in 0..n {
        assert!((m[i] - mean[i]).abs() < 4.0 * (cov[(i, i)] / reps as f64).sqrt());
        for l in 0..=i {
            let emp = xs.iter().map(|x| (x[i] - m[i]) * (x[l] - m[l])).sum::<f64>() / (reps - 1) as f64;
            let se = ((cov[(i, i)] * cov[(l, l)] + cov[(i, l)].powi(2)) / reps as f64).sqrt();
            assert!((emp - cov[(i, l)]).abs() < 4.0 * se, "({i},{l})");
        }
    }
}
