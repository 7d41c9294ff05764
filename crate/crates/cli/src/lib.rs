//! Batch front end for the pdbrf solvers.
//!
//! A run reads a TOML configuration ([`config::parse_config`]), assembles the
//! problem, resolves the step size and executes one solver
//! ([`runner::execute`]). Three artifacts are written per run:
//!
//! - `manifest.toml`: the configuration with every resolved constant; feeding
//!   it back as a configuration reproduces the run
//! - `history.csv`: one row per iteration
//! - `certificate.toml`: residuals, KKT residual and, when available,
//!   objective values and the distance to an exact reference solution
//!
//! The process exits with 0 on convergence, 2 when the iteration budget is
//! exhausted, 3 on divergence and 1 on any error.

pub mod artifacts;
pub mod config;
pub mod runner;

pub use config::{parse_config, ConfigError, Overrides, RunConfig, SolverKind};
pub use runner::{execute, exit_code, Certificate, HistoryRow, RunReport};
