//! Command-line driver: builds an experiment from arguments (or loads one
//! from a file) and prints the run report.
//!
//! Exit codes: 0 pass, 1 check failed, 2 inconclusive, 3 configuration
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superproc::harness::{self, Experiment};
use superproc::Error;

#[derive(Parser)]
#[command(
    name = "superproc",
    about = "Critical superprocesses on finite spaces: oracles, samplers, limit checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    kind: Kind,
}

#[derive(Args)]
struct Common {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Kind-specific parameters: inline JSON (starts with '{') or a file path.
    #[arg(long)]
    params: Option<String>,
    /// Calibrate the model to criticality before running.
    #[arg(long, default_value_t = false)]
    calibrate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker count for Monte Carlo kinds.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Output path (report, or the per-path CSV for `simulate`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: json or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Subcommand)]
enum Kind {
    /// Validate the model's standing assumptions.
    Validate(Common),
    /// Print the principal eigen-triple, c0 and kernel gap constants.
    Spectral(Common),
    /// Evaluate a deterministic oracle (params: op = vt | extinction |
    /// occupation | first_variation | second_variation | moment_second |
    /// survival).
    Oracle(Common),
    /// Simulate paths; writes per-path summaries as CSV to --out.
    Simulate(Common),
    /// Brute-force Poisson-random-measure identity and TV checks.
    PrmCheck(Common),
    /// Semi-analytic spine estimator against the first-variation oracle.
    SpineCheck(Common),
    /// Semi-analytic 2-spine estimator against the second-variation oracle.
    TwoSpineCheck(Common),
    /// Limit-theorem checks (params: check = kolmogorov | uniform-ratio |
    /// bt-slope | yaglom-laplace | spine-w | centered-vanish |
    /// ergodic-aphi-u | yaglom-ks).
    Limits(Common),
    /// Run an experiment file verbatim.
    Run {
        /// Experiment JSON file; model paths resolve relative to it.
        experiment: PathBuf,
    },
}

fn parse_params(raw: &Option<String>) -> anyhow::Result<serde_json::Value> {
    match raw {
        None => Ok(serde_json::json!({})),
        Some(s) if s.trim_start().starts_with('{') => Ok(serde_json::from_str(s)?),
        Some(path) => Ok(serde_json::from_slice(&std::fs::read(path)?)?),
    }
}

fn build(kind: &str, common: Common) -> anyhow::Result<Experiment> {
    Ok(Experiment {
        model: common.model,
        kind: kind.into(),
        calibrate: common.calibrate,
        params: parse_params(&common.params)?,
        seed: common.seed,
        batch: common.batch,
        out: common.out,
        format: common.format,
    })
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Inconclusive(_) => 2,
        _ => 3,
    }
}

fn run() -> anyhow::Result<u8> {
    let cli = Cli::parse();
    let cwd = std::env::current_dir()?;
    let report = match cli.kind {
        Kind::Run { experiment } => harness::run_experiment_file(&experiment),
        other => {
            let (kind, common) = match other {
                Kind::Validate(c) => ("validate", c),
                Kind::Spectral(c) => ("spectral", c),
                Kind::Oracle(c) => ("oracle", c),
                Kind::Simulate(c) => ("simulate", c),
                Kind::PrmCheck(c) => ("prm-check", c),
                Kind::SpineCheck(c) => ("spine-check", c),
                Kind::TwoSpineCheck(c) => ("two-spine-check", c),
                Kind::Limits(c) => ("limits", c),
                Kind::Run { .. } => unreachable!(),
            };
            let exp = build(kind, common)?;
            harness::run_experiment(&exp, &cwd)
        }
    };
    match report {
        Ok(report) => {
            let rendered = harness::emit_report(&report, &report.experiment.format)?;
            // The simulate kind uses --out for its per-path CSV, so its
            // report always goes to stdout.
            match (&report.experiment.out, report.experiment.kind.as_str()) {
                (Some(path), kind) if kind != "simulate" => std::fs::write(path, &rendered)?,
                _ => println!("{rendered}"),
            }
            if report.inconclusive {
                Ok(2)
            } else if report.pass {
                Ok(0)
            } else {
                Ok(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(exit_code_for(&e))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
