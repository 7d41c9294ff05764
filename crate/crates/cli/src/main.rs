use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use pdbrf_cli::artifacts::write_artifacts;
use pdbrf_cli::{execute, exit_code, parse_config, Overrides, SolverKind};

/// Solve a structured monotone inclusion described by a TOML file.
#[derive(Debug, Parser)]
#[command(name = "pdbrf", version)]
struct Cli {
    /// Run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Step size; rejected unless it satisfies the step-size inequality.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving manifest.toml, history.csv and certificate.toml.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
}

fn main_inner(cli: Cli) -> Result<i32> {
    let text = std::fs::read_to_string(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    let mut cfg = parse_config(&text)?;
    cfg.apply(&Overrides {
        max_iters: cli.max_iters,
        tol: cli.tol,
        gamma: cli.gamma,
        epsilon: cli.epsilon,
        seed: cli.seed,
        output: cli.output,
        solver: cli.solver,
    })?;
    let report = execute(&cfg)?;
    write_artifacts(&report, &cfg.output)?;
    let c = &report.certificate;
    println!("status: {:?}", c.status);
    println!("iterations: {}", c.iterations);
    println!("gamma: {}", c.gamma);
    if let Some(k) = c.kkt_residual {
        println!("kkt_residual: {k:e}");
    }
    if let Some(d) = &c.divergence {
        println!("divergence: {d}");
    }
    println!("artifacts: {}", cfg.output.display());
    Ok(exit_code(report.status()))
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
