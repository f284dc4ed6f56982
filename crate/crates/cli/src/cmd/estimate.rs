use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, write_csv, write_summary};
use rfdlab_core::estimation::{
    bootstrap_estimate, estimate_from_samples, fit_kernel_params, BootstrapConfig, LossSample, RandomLinearOracle,
    SyntheticGrfOracle, VarianceEstimate,
};
use rfdlab_core::rfd::{asymptotic_learning_rate, asymptotic_learning_rate_srfd};
use std::path::Path;

pub const DEFAULTS: &[(&str, &str)] = &[
    ("oracle", "random-linear"),
    ("tol", "0.3"),
    ("pilot", "6000"),
    ("b_min", "20"),
    ("b_max", "2048"),
    ("budget", "50000000"),
    ("dim", "1000"),
    ("sigma2", "0.002"),
    ("radius", "1"),
    ("grf_c0", "1"),
    ("grf_c0_prime", "1"),
    ("grf_noise_c0", "10"),
    ("grf_noise_c0_prime", "1"),
    ("grf_mean", "0"),
    ("family", "se"),
    ("beta", "1"),
    ("terminal_loss", "0"),
    ("batch_size", "64"),
    ("ci_z", "1.959963984540054"),
    ("export_samples", "false"),
];

pub const SAMPLE_HEADER: &[&str] = &["batch_size", "loss", "grad_sq_norm", "dim"];

/// Reads `batch_size,loss,grad_sq_norm,dim` rows; errors name the line.
pub fn read_samples(path: &Path) -> Result<Vec<LossSample>, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column '{name}' in header {header:?}")))
    };
    let idx = [col("batch_size")?, col("loss")?, col("grad_sq_norm")?, col("dim")?];
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let field_err = |name: &str, raw: &str| bad(format!("line {line}: invalid {name} '{raw}'"));
        let b: u64 = get(0).parse().map_err(|_| field_err("batch_size", get(0)))?;
        let loss: f64 = get(1).parse().map_err(|_| field_err("loss", get(1)))?;
        let g: f64 = get(2).parse().map_err(|_| field_err("grad_sq_norm", get(2)))?;
        let d: usize = get(3).parse().map_err(|_| field_err("dim", get(3)))?;
        if b == 0 {
            return Err(field_err("batch_size", get(0)));
        }
        if !(g >= 0.0) || !g.is_finite() {
            return Err(field_err("grad_sq_norm", get(2)));
        }
        if !loss.is_finite() {
            return Err(field_err("loss", get(1)));
        }
        if d == 0 || out.first().is_some_and(|s: &LossSample| s.dim != d) {
            return Err(field_err("dim", get(3)));
        }
        out.push(LossSample { batch_size: b, loss, grad_sq_norm: g, dim: d });
    }
    if out.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(out)
}

struct Outcome {
    loss: VarianceEstimate,
    grad: VarianceEstimate,
    mean: f64,
    samples: Vec<LossSample>,
    notes: Vec<(String, String)>,
}

fn run_oracle(cfg: &Config) -> Result<Outcome, CliError> {
    let seed: u64 = cfg.parse("seed")?;
    let boot = BootstrapConfig {
        tol: cfg.positive("tol")?,
        pilot_size: cfg.parse("pilot")?,
        b_min: cfg.parse("b_min")?,
        b_max: cfg.parse("b_max")?,
        budget: cfg.parse("budget")?,
    };
    let oracle = cfg.str("oracle");
    let mut notes = Vec::new();
    let result = if let Some(path) = oracle.strip_prefix("csv:") {
        let samples = read_samples(Path::new(path))?;
        let (loss, grad, mean) = estimate_from_samples(&samples)?;
        return Ok(Outcome { loss, grad, mean, samples, notes });
    } else if oracle == "random-linear" {
        let o = RandomLinearOracle::new(cfg.parse("dim")?, cfg.positive("sigma2")?, cfg.positive("radius")?, seed);
        notes.push(("true_c0".into(), num(o.true_c0())));
        notes.push(("true_mean".into(), num(o.true_mean())));
        bootstrap_estimate(&o, &boot, seed)?
    } else if oracle == "synthetic-grf" {
        let o = SyntheticGrfOracle {
            c0: cfg.positive("grf_c0")?,
            c0_prime_abs: cfg.positive("grf_c0_prime")?,
            noise_c0: cfg.parse("grf_noise_c0")?,
            noise_c0_prime_abs: cfg.parse("grf_noise_c0_prime")?,
            mean: cfg.parse("grf_mean")?,
            dim: cfg.parse("dim")?,
        };
        if o.dim == 0 || o.noise_c0 < 0.0 || o.noise_c0_prime_abs < 0.0 {
            return Err(CliError::Config("synthetic-grf needs dim >= 1 and nonnegative noise".into()));
        }
        notes.push(("true_c0".into(), num(o.c0)));
        notes.push(("true_mean".into(), num(o.mean)));
        bootstrap_estimate(&o, &boot, seed)?
    } else {
        return Err(CliError::Config(format!("oracle '{oracle}' (expected synthetic-grf, random-linear, csv:<path>)")));
    };
    notes.push(("rounds".into(), result.rounds.to_string()));
    notes.push(("budget_exhausted".into(), result.budget_exhausted.to_string()));
    if result.budget_exhausted {
        eprintln!("warning: sample budget exhausted before rel_std < tol");
    }
    Ok(Outcome { loss: result.loss, grad: result.grad, mean: result.mean, samples: result.samples, notes })
}

fn report_row(stream: &str, e: &VarianceEstimate) -> Vec<String> {
    vec![
        stream.into(),
        num(e.beta0),
        num(e.beta1),
        num(e.var_beta0),
        num(e.relative_std),
        e.n_samples_used.to_string(),
    ]
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let export: bool = cfg.parse("export_samples")?;
    let terminal: f64 = cfg.parse("terminal_loss")?;
    let batch: f64 = cfg.positive("batch_size")?;
    let z: f64 = cfg.positive("ci_z")?;
    let family = cfg.family("family")?;
    let beta: f64 = cfg.parse("beta")?;
    let digest = cfg.digest();
    let o = run_oracle(cfg)?;
    let out = cfg.out_dir()?;
    write_csv(
        &out.join("estimate.csv"),
        &digest,
        &["stream", "beta0", "beta1", "var_beta0", "rel_std", "n_used"],
        &[report_row("loss", &o.loss), report_row("grad", &o.grad)],
    )?;
    if export {
        let rows: Vec<Vec<String>> = o
            .samples
            .iter()
            .map(|s| vec![s.batch_size.to_string(), num(s.loss), num(s.grad_sq_norm), s.dim.to_string()])
            .collect();
        write_csv(&out.join("samples.csv"), &digest, SAMPLE_HEADER, &rows)?;
    }

    let (c0, c0p) = (o.loss.beta0, o.grad.beta0);
    let (lo, hi) = o.loss.confidence_interval(z);
    let mut lines: Vec<(String, String)> = vec![
        ("mu".into(), num(o.mean)),
        ("c0".into(), num(c0)),
        ("c0_ci".into(), format!("[{}, {}]", num(lo), num(hi))),
        ("c0_prime_abs".into(), num(c0p)),
        ("noise_c0".into(), num(o.loss.beta1)),
        ("noise_c0_prime_abs".into(), num(o.grad.beta1)),
        ("rel_std_loss".into(), num(o.loss.relative_std)),
        ("rel_std_grad".into(), num(o.grad.relative_std)),
    ];
    match fit_kernel_params(c0, c0p, family, beta) {
        Ok(k) => {
            lines.push(("family".into(), family.name().into()));
            lines.push(("variance".into(), num(k.sigma2)));
            lines.push(("s".into(), num(k.s)));
        }
        Err(e) => return Err(CliError::Numerical(format!("cannot fit kernel: {e}"))),
    }
    if terminal >= o.mean {
        eprintln!("warning: terminal_loss {terminal} is not below the estimated mean {}", o.mean);
    }
    lines.push(("terminal_loss".into(), num(terminal)));
    lines.push(("h_inf".into(), num(asymptotic_learning_rate(c0, -c0p, terminal, o.mean))));
    let noise_c0p = -o.grad.beta1.max(0.0);
    let h_s = asymptotic_learning_rate_srfd(c0, -c0p, o.loss.beta1.max(0.0), noise_c0p, batch, terminal, o.mean);
    lines.push(("batch_size".into(), num(batch)));
    lines.push(("h_inf_srfd".into(), num(h_s)));
    lines.extend(o.notes);
    write_summary(&out.join("estimate_summary.txt"), &digest, &lines)?;
    println!("config_digest: {digest}");
    for (k, v) in &lines {
        println!("{k}: {v}");
    }
    Ok(())
}
