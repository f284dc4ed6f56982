use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, write_csv};
use rfdlab_core::kernels::{Family, StationaryKernel};
use rfdlab_core::rfd::{arfd_step, step_size_closed, Theta};

pub const DEFAULTS: &[(&str, &str)] = &[
    ("families", "se,matern32,matern52,rq"),
    ("variance", "1"),
    ("s", "1"),
    ("beta", "1"),
    ("theta_min", "0.001"),
    ("theta_max", "1000"),
    ("per_decade", "10"),
];

/// Log-spaced grid from `lo` to `hi` with `per_decade` points per decade.
fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    let n = ((b - a) * per_decade as f64).round().max(0.0) as usize;
    (0..=n).map(|i| 10f64.powf(a + (b - a) * i as f64 / n.max(1) as f64)).collect()
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let (lo, hi) = (cfg.positive("theta_min")?, cfg.positive("theta_max")?);
    if lo > hi {
        return Err(CliError::Config(format!("theta_min {lo} exceeds theta_max {hi}")));
    }
    let per_decade: usize = cfg.parse("per_decade")?;
    if per_decade == 0 {
        return Err(CliError::Config("per_decade must be at least 1".into()));
    }
    let mut thetas: Vec<Theta> = log_grid(lo, hi, per_decade).into_iter().map(Theta::Finite).collect();
    thetas.push(Theta::Infinite);
    let (variance, s, beta) = (cfg.parse("variance")?, cfg.parse("s")?, cfg.parse("beta")?);
    let mut rows = Vec::new();
    for name in cfg.list("families") {
        let family = Family::parse(&name).ok_or_else(|| CliError::Config(format!("unknown kernel family '{name}'")))?;
        let k = StationaryKernel::new(family, variance, s, beta)?;
        for &t in &thetas {
            let eta = step_size_closed(&k, t)?.step_size;
            rows.push(vec![family.name().to_string(), num(t.as_f64()), num(eta), num(arfd_step(&k, t.as_f64()))]);
        }
    }
    let path = cfg.out_dir()?.join("stepsize.csv");
    write_csv(&path, &cfg.digest(), &["family", "theta", "eta_star", "eta_hat"], &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}
