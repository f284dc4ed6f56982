use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, write_csv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfdlab_core::bayesopt::{
    adversarial_fixture, bump_eval, covering_lattice, grid_search, BumpFixture, BumpKind, Modulus, Norm,
};

pub const DEFAULTS: &[(&str, &str)] = &[("dim", "2"), ("l", "1"), ("eps", "0.25"), ("alpha", "1"), ("fixtures", "100")];

const HEADER: &[&str] = &["fixture", "evaluations", "covering_bound", "found", "minimum", "gap", "within_eps"];

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let d: usize = cfg.parse("dim")?;
    if !(1..=4).contains(&d) {
        return Err(CliError::Infeasible(format!("grid search supports dim 1 to 4, got {d}")));
    }
    let l = cfg.positive("l")?;
    let eps: f64 = cfg.parse("eps")?;
    if !(eps > 0.0) {
        return Err(CliError::Infeasible(format!("tolerance {eps} must be positive")));
    }
    let alpha: f64 = cfg.parse("alpha")?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CliError::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let omega = if alpha == 1.0 { Modulus::Linear { l } } else { Modulus::Power { l, alpha } };
    let count: usize = cfg.parse("fixtures")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.parse("seed")?);

    // Sup-norm L-Lipschitz bumps; on [0,1]^d they also satisfy L·δ^α.
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut bound = 0;
    for i in 0..count {
        let bump = BumpFixture {
            kind: BumpKind::Lipschitz,
            l,
            delta: rng.random_range(0.01..0.5),
            center: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
            norm: Norm::Sup,
        };
        let res = grid_search(|x| bump_eval(&bump, x).0, d, &omega, eps)?;
        bound = res.per_axis.pow(d as u32);
        let gap = res.value - bump.minimum();
        worst = worst.max(gap);
        rows.push(vec![
            i.to_string(),
            res.evaluations.to_string(),
            bound.to_string(),
            num(res.value),
            num(bump.minimum()),
            num(gap),
            (gap <= eps * (1.0 + 1e-12)).to_string(),
        ]);
    }
    println!("covering lattice: {bound} evaluations; worst gap {} (eps {})", num(worst), num(eps));

    // One evaluation short of the lattice, a bump hides between the points.
    if let Modulus::Linear { .. } = omega {
        let mut points = covering_lattice(d, eps / l);
        points.pop();
        if let Some(bump) = adversarial_fixture(&points, d, l, eps) {
            let found = points.iter().map(|p| bump_eval(&bump, p).0).fold(f64::INFINITY, f64::min);
            let gap = found - bump.minimum();
            rows.push(vec![
                "adversarial".into(),
                points.len().to_string(),
                (points.len() + 1).to_string(),
                num(found),
                num(bump.minimum()),
                num(gap),
                (gap <= eps).to_string(),
            ]);
            println!("adversarial bump against {} points: gap {} > eps", points.len(), num(gap));
        }
    }
    let path = cfg.out_dir()?.join("gridsearch.csv");
    write_csv(&path, &cfg.digest(), HEADER, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}
