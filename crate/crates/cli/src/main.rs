//! rfdlab: step-size curves, span simulations, covariance estimation,
//! Bayesian optimization demos and grid-search baselines, all as CSV.

mod cmd;
mod config;
mod error;
mod output;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use config::Config;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rfdlab",
    version,
    about = "Random function descent experiments",
    long_about = "Random function descent experiments.\n\n\
        Settings are `key = value` pairs. Precedence, lowest first: built-in defaults, \
        the --config file, then --seed/--out and --set flags. Unknown keys are rejected.\n\n\
        Exit codes: 0 success, 2 config error, 3 numerical failure, 4 infeasible instance.\n\
        RFDLAB_THREADS caps the worker threads (default: logical cores)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines (`#` starts a comment).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (key `out`).
    #[arg(long)]
    out: Option<String>,
    /// Base random seed (key `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override a key, e.g. `--set dims=10,100`. Repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// RFD step size and its A-RFD approximation against the gradient cost quotient.
    Stepsize(Common),
    /// Span simulations of gradient span algorithms on random functions.
    Simulate(Common),
    /// Aggregate trace CSVs from `simulate` (key `inputs`, comma separated).
    Concentrate(Common),
    /// Estimate C(0), C'(0), noise terms and the mean from mini-batch losses.
    Estimate(Common),
    /// Bayesian optimization on a 1-D or 2-D grid with a sampled ground truth.
    Bayesopt(Common),
    /// Grid search on bump fixtures, with an adversarial counterexample.
    Gridsearch(Common),
}

type Runner = fn(&Config) -> Result<(), CliError>;

fn table(name: &str) -> (&'static [(&'static str, &'static str)], Runner) {
    match name {
        "stepsize" => (cmd::stepsize::DEFAULTS, cmd::stepsize::run),
        "simulate" => (cmd::simulate::DEFAULTS, cmd::simulate::run),
        "concentrate" => (cmd::simulate::CONCENTRATE_DEFAULTS, cmd::simulate::concentrate),
        "estimate" => (cmd::estimate::DEFAULTS, cmd::estimate::run),
        "bayesopt" => (cmd::bayesopt::DEFAULTS, cmd::bayesopt::run),
        "gridsearch" => (cmd::gridsearch::DEFAULTS, cmd::gridsearch::run),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn key_help(defaults: &[(&str, &str)]) -> String {
    let mut s = String::from("Keys (default):\n  seed (0)\n  out (.)\n");
    for (k, v) in defaults {
        s.push_str(&format!("  {k} ({v})\n"));
    }
    s
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var("RFDLAB_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("RFDLAB_THREADS = '{v}' is not a positive integer"))),
        },
    }
}

fn run(name: &str, common: Common) -> Result<(), CliError> {
    let (defaults, runner) = table(name);
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = common.out {
        overrides.push(format!("out={o}"));
    }
    overrides.extend(common.set);
    let cfg = Config::load(defaults, common.config.as_deref(), &overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| runner(&cfg))
}

fn main() -> ExitCode {
    let mut command = Cli::command();
    for name in ["stepsize", "simulate", "concentrate", "estimate", "bayesopt", "gridsearch"] {
        let help = key_help(table(name).0);
        command = command.mut_subcommand(name, |c| c.after_help(help));
    }
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (name, common) = match cli.command {
        Command::Stepsize(c) => ("stepsize", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Concentrate(c) => ("concentrate", c),
        Command::Estimate(c) => ("estimate", c),
        Command::Bayesopt(c) => ("bayesopt", c),
        Command::Gridsearch(c) => ("gridsearch", c),
    };
    match run(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rfdlab {name}: {e}");
            e.exit_code()
        }
    }
}
