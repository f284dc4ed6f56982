use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, read_digest, write_csv};
use rayon::prelude::*;
use rfdlab_core::kernels::{NonStationaryKernel, Scaling};
use rfdlab_core::simulator::{
    concentration_stats, simulate, ConcentrationRow, Dimension, GradientSpanAlgorithm, Record, SimConfig, Trace,
};
use std::path::PathBuf;

pub const DEFAULTS: &[(&str, &str)] = &[
    ("dims", "10,100,1000"),
    ("seeds", "100"),
    ("steps", "10"),
    ("optimizer", "rfd"),
    ("lr", "0.1"),
    ("momentum", "0.5"),
    ("family", "se"),
    ("variance", "1"),
    ("s", "1"),
    ("beta", "1"),
    ("mean", "0"),
    ("x0_norm", "1"),
    ("scaling", "inverse-dim"),
];

const TRACE_HEADER: &[&str] = &["seed", "d", "step", "f", "grad_sq", "step_size", "span_dim"];
const CONC_HEADER: &[&str] = &["d", "step", "mean_f", "var_f", "mean_gradsq", "var_gradsq", "n_seeds"];

fn parse_dim(s: &str) -> Result<Dimension, CliError> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Dimension::Infinite);
    }
    match s.parse::<usize>() {
        Ok(d) if d >= 2 => Ok(Dimension::Finite(d)),
        _ => Err(CliError::Config(format!("dimension '{s}' must be an integer >= 2 or 'inf'"))),
    }
}

fn optimizer(cfg: &Config) -> Result<GradientSpanAlgorithm, CliError> {
    let kernel = cfg.kernel()?;
    let mean: f64 = cfg.parse("mean")?;
    Ok(match cfg.str("optimizer") {
        "rfd" => GradientSpanAlgorithm::RfdGd { kernel, mean },
        "a-rfd" => GradientSpanAlgorithm::ArfdGd { kernel, mean },
        "gd" => GradientSpanAlgorithm::ConstantLr { alpha: cfg.positive("lr")? },
        "heavy-ball" => GradientSpanAlgorithm::HeavyBall { alpha: cfg.positive("lr")?, momentum: cfg.parse("momentum")? },
        other => return Err(CliError::Config(format!("optimizer '{other}' (expected rfd, a-rfd, gd, heavy-ball)"))),
    })
}

fn sim_config(cfg: &Config, dim: Dimension) -> Result<SimConfig, CliError> {
    let scaling = match (cfg.str("scaling"), dim) {
        ("unit", _) => Scaling::Unit,
        ("inverse-dim", Dimension::Finite(d)) => Scaling::InverseDimension(d),
        ("inverse-dim", Dimension::Infinite) => Scaling::InverseDimension(1),
        (other, _) => return Err(CliError::Config(format!("scaling '{other}' (expected unit, inverse-dim)"))),
    };
    Ok(SimConfig {
        kernel: NonStationaryKernel::stationary(cfg.kernel()?, cfg.parse("mean")?),
        scaling,
        dim,
        x0_norm: cfg.parse("x0_norm")?,
        gsa: optimizer(cfg)?,
        n_steps: cfg.parse("steps")?,
    })
}

fn trace_rows(traces: &[Trace]) -> Vec<Vec<String>> {
    traces
        .iter()
        .flat_map(|t| {
            t.records.iter().map(move |r| {
                vec![
                    t.seed.to_string(),
                    t.dim.to_string(),
                    r.step.to_string(),
                    num(r.f),
                    num(r.grad_sq),
                    num(r.step_size),
                    r.span_dim.to_string(),
                ]
            })
        })
        .collect()
}

fn conc_rows(dim: Dimension, rows: &[ConcentrationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                dim.to_string(),
                r.step.to_string(),
                num(r.mean_f),
                num(r.var_f),
                num(r.mean_grad_sq),
                num(r.var_grad_sq),
                r.n_seeds.to_string(),
            ]
        })
        .collect()
}

/// Least-squares slope of log var(f) against log d, per step, over the
/// finite dimensions. Variance of order 1/d gives slope −1.
pub fn slopes(tables: &[(Dimension, Vec<ConcentrationRow>)]) -> Vec<(usize, f64)> {
    let finite: Vec<(f64, &Vec<ConcentrationRow>)> = tables
        .iter()
        .filter_map(|(d, rows)| match d {
            Dimension::Finite(d) => Some(((*d as f64).ln(), rows)),
            Dimension::Infinite => None,
        })
        .collect();
    if finite.len() < 2 {
        return Vec::new();
    }
    let steps = finite.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    (0..steps)
        .filter_map(|k| {
            let pts: Vec<(f64, f64)> =
                finite.iter().filter(|(_, r)| r[k].var_f > 0.0).map(|(x, r)| (*x, r[k].var_f.ln())).collect();
            if pts.len() < 2 {
                return None;
            }
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            (sxx > 0.0).then(|| (k, sxy / sxx))
        })
        .collect()
}

fn print_slopes(tables: &[(Dimension, Vec<ConcentrationRow>)]) {
    let s = slopes(tables);
    if s.is_empty() {
        println!("slope diagnostic: needs at least two finite dimensions");
        return;
    }
    println!("slope of log var(f) against log d (predictable progress gives -1):");
    for (k, slope) in s {
        println!("  step {k}: {slope:.4}");
    }
}

pub fn run(cfg: &Config) -> Result<(), CliError> {
    let dims: Vec<Dimension> = cfg.list("dims").iter().map(|s| parse_dim(s)).collect::<Result<_, _>>()?;
    if dims.is_empty() {
        return Err(CliError::Config("dims is empty".into()));
    }
    let seeds: u64 = cfg.parse("seeds")?;
    if seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    let base: u64 = cfg.parse("seed")?;
    let digest = cfg.digest();
    let configs: Vec<SimConfig> = dims.iter().map(|&d| sim_config(cfg, d)).collect::<Result<_, _>>()?;
    let work: Vec<(usize, u64)> = (0..dims.len()).flat_map(|i| (0..seeds).map(move |s| (i, base + s))).collect();
    let traces: Vec<Trace> =
        work.par_iter().map(|&(i, s)| simulate(&configs[i], s, &digest)).collect::<Result<_, _>>()?;

    let mut tables = Vec::new();
    for (i, &d) in dims.iter().enumerate() {
        let group = &traces[i * seeds as usize..(i + 1) * seeds as usize];
        tables.push((d, concentration_stats(group)?));
    }
    let out = cfg.out_dir()?;
    write_csv(&out.join("trace.csv"), &digest, TRACE_HEADER, &trace_rows(&traces))?;
    let conc: Vec<Vec<String>> = tables.iter().flat_map(|(d, rows)| conc_rows(*d, rows)).collect();
    write_csv(&out.join("concentration.csv"), &digest, CONC_HEADER, &conc)?;
    println!("wrote {} traces to {}", traces.len(), out.display());
    print_slopes(&tables);
    Ok(())
}

pub const CONCENTRATE_DEFAULTS: &[(&str, &str)] = &[("inputs", "")];

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, CliError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| CliError::Config(format!("line {line}: bad {name} '{raw}'")))
}

/// Aggregates trace CSVs written by `simulate`, refusing mixed digests.
pub fn concentrate(cfg: &Config) -> Result<(), CliError> {
    let inputs = cfg.list("inputs");
    if inputs.is_empty() {
        return Err(CliError::Config("inputs lists no trace files".into()));
    }
    let mut digest: Option<String> = None;
    let mut traces: Vec<Trace> = Vec::new();
    for path in inputs.iter().map(PathBuf::from) {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let d = read_digest(&text)
            .ok_or_else(|| CliError::Config(format!("{}: missing config digest line", path.display())))?
            .to_string();
        if let Some(prev) = &digest {
            if *prev != d {
                return Err(CliError::Config(format!("{}: digest {d} differs from {prev}", path.display())));
            }
        }
        digest = Some(d.clone());
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header != TRACE_HEADER {
            return Err(CliError::Config(format!("{}: header {header:?}, expected {TRACE_HEADER:?}", path.display())));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let seed: u64 = field(&rec, 0, "seed", line)?;
            let dim = parse_dim(rec.get(1).unwrap_or(""))?;
            let record = Record {
                step: field(&rec, 2, "step", line)?,
                f: field(&rec, 3, "f", line)?,
                grad_sq: field(&rec, 4, "grad_sq", line)?,
                step_size: field(&rec, 5, "step_size", line)?,
                span_dim: field(&rec, 6, "span_dim", line)?,
                above_mean: false,
                frozen: false,
            };
            match traces.last_mut() {
                Some(t) if t.seed == seed && t.dim == dim && record.step == t.records.len() => t.records.push(record),
                _ => traces.push(Trace { seed, dim, digest: d.clone(), records: vec![record] }),
            }
        }
    }
    let mut dims: Vec<Dimension> = Vec::new();
    for t in &traces {
        if !dims.contains(&t.dim) {
            dims.push(t.dim);
        }
    }
    let mut tables = Vec::new();
    for d in dims {
        let group: Vec<Trace> = traces.iter().filter(|t| t.dim == d).cloned().collect();
        tables.push((d, concentration_stats(&group)?));
    }
    let conc: Vec<Vec<String>> = tables.iter().flat_map(|(d, rows)| conc_rows(*d, rows)).collect();
    let out = cfg.out_dir()?.join("concentration.csv");
    write_csv(&out, digest.as_deref().unwrap_or(""), CONC_HEADER, &conc)?;
    println!("aggregated {} traces into {}", traces.len(), out.display());
    print_slopes(&tables);
    Ok(())
}
