use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, write_csv};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rfdlab_core::bayesopt::{run_bo_on_grid, sample_grf, Acquisition};
use rfdlab_core::kernels::NonStationaryKernel;

pub const DEFAULTS: &[(&str, &str)] = &[
    ("dim", "1"),
    ("grid", "33"),
    ("family", "se"),
    ("variance", "1"),
    ("s", "0.2"),
    ("beta", "1"),
    ("acquisition", "ei"),
    ("eps", "0"),
    ("ucb_beta", "4"),
    ("iterations", "20"),
    ("noise", "0"),
];

/// Largest grid the exact GRF draw is allowed to factor.
const MAX_GRID_POINTS: usize = 4096;

fn normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn acquisition(cfg: &Config) -> Result<Acquisition, CliError> {
    let eps: f64 = cfg.parse("eps")?;
    Ok(match cfg.str("acquisition") {
        "pi" => Acquisition::Pi { eps },
        "ei" => Acquisition::Ei { eps },
        "ucb" => {
            let beta: f64 = cfg.parse("ucb_beta")?;
            if !(beta >= 0.0) {
                return Err(CliError::Config(format!("ucb_beta must be nonnegative, got {beta}")));
            }
            Acquisition::Ucb { beta }
        }
        "kg" => Acquisition::Kg,
        other => return Err(CliError::Config(format!("acquisition '{other}' (expected pi, ei, ucb, kg)"))),
    })
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let dim: usize = cfg.parse("dim")?;
    if !(1..=2).contains(&dim) {
        return Err(CliError::Infeasible(format!("bayesopt supports dim 1 or 2, got {dim}")));
    }
    let per_axis: usize = cfg.parse("grid")?;
    if per_axis < 2 {
        return Err(CliError::Config("grid needs at least 2 points per axis".into()));
    }
    if per_axis.pow(dim as u32) > MAX_GRID_POINTS {
        return Err(CliError::Infeasible(format!("{per_axis}^{dim} grid points exceed {MAX_GRID_POINTS}")));
    }
    let noise: f64 = cfg.parse("noise")?;
    if !(noise >= 0.0) {
        return Err(CliError::Config(format!("noise must be nonnegative, got {noise}")));
    }
    let iterations: usize = cfg.parse("iterations")?;
    let acq = acquisition(cfg)?;
    let seed: u64 = cfg.parse("seed")?;
    let kernel = NonStationaryKernel::stationary(cfg.kernel()?, 0.0);

    let axis: Vec<f64> = (0..per_axis).map(|i| i as f64 / (per_axis - 1) as f64).collect();
    let grid: Vec<DVector<f64>> = if dim == 1 {
        axis.iter().map(|&x| DVector::from_vec(vec![x])).collect()
    } else {
        axis.iter().flat_map(|&y| axis.iter().map(move |&x| DVector::from_vec(vec![x, y]))).collect()
    };
    let truth = sample_grf(&kernel, &grid, &normals(seed, 0, grid.len()))?;
    let draws = normals(seed, 1, iterations);
    let steps = run_bo_on_grid(&kernel, &grid, &truth, noise, &draws, acq, iterations)?;

    let name = cfg.str("acquisition");
    let mut header = vec!["iter".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.extend(["value", "acq", "score", "best", "regret"].map(String::from));
    let rows: Vec<Vec<String>> = steps
        .iter()
        .map(|s| {
            let mut r = vec![s.iter.to_string()];
            r.extend(grid[s.index].iter().map(|&x| num(x)));
            r.extend([num(s.value), name.to_string(), num(s.score), num(s.best), num(s.regret)]);
            r
        })
        .collect();
    let path = cfg.out_dir()?.join("bayesopt.csv");
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(&path, &cfg.digest(), &header, &rows)?;
    let optimum = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("grid optimum {}, final regret {}", num(optimum), steps.last().map_or("n/a".into(), |s| num(s.regret)));
    println!("wrote {} iterations to {}", steps.len(), path.display());
    Ok(())
}
