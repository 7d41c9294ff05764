//! Run configuration: a TOML document describing the problem, the solver and
//! its stopping rule.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use pdbrf_core::brf::{Seeds, StopRule};
use pdbrf_core::inexact::{BlockPerturbation, KappaSequence, PerturbationSchedule};
use pdbrf_core::{BlockVector, BundleSpec, MinProblemSpec, SpaceShape};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_OUTPUT: &str = "pdbrf-out";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("configuration is empty")]
    Empty,
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Primal-dual backward-reflected-forward iteration.
    #[default]
    Brf,
    /// Forward-reflected-backward on the stacked product problem.
    Frb,
    /// Primal-dual iteration through the convex minimization front end.
    #[value(name = "convex_min")]
    ConvexMin,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Brf => "brf",
            Self::Frb => "frb",
            Self::ConvexMin => "convex_min",
        }
    }
}

/// Either a raw inclusion or a minimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Bundle(BundleSpec),
    Min(MinProblemSpec),
}

impl ProblemSpec {
    pub fn bundle_spec(&self) -> pdbrf_core::Result<BundleSpec> {
        match self {
            Self::Bundle(b) => Ok(b.clone()),
            Self::Min(p) => p.to_bundle_spec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// Every block uses `κ_{k,n} = aggregate/sqrt(m+1) · ratio^n`.
    Geometric { aggregate: f64, ratio: f64 },
    /// Every block uses the listed values, then zero.
    FiniteSupport { values: Vec<f64> },
}

impl PerturbationSpec {
    pub fn schedule(&self, shape: &SpaceShape) -> pdbrf_core::Result<PerturbationSchedule> {
        match self {
            Self::Geometric { aggregate, ratio } => PerturbationSchedule::geometric(shape, *aggregate, *ratio),
            Self::FiniteSupport { values } => PerturbationSchedule::new(
                (0..=shape.m())
                    .map(|k| BlockPerturbation::affine(KappaSequence::FiniteSupport(values.clone()), shape.block_dim(k)))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for StopSpec {
    fn default() -> Self {
        Self { max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL }
    }
}

/// Starting points, flattened over the product space (primal block first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub x_minus1: Vec<f64>,
    pub x0: Vec<f64>,
}

/// Constants computed for a run; written to the manifest and ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolved {
    pub solver: SolverKind,
    pub gamma: f64,
    pub epsilon: f64,
    pub beta_prime: f64,
    pub mu: f64,
    pub kappa_sup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// `1 − γ/(2β) − 2γμ − 7γκ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Step-size bound of the single-inclusion baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_bound: Option<f64>,
    pub dual_blocks: usize,
    pub total_dim: usize,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_output() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT)
}

/// Field order matters: TOML wants plain values before tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub stop: StopSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedSpec>,
    pub problem: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<Resolved>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub solver: Option<SolverKind>,
}

/// Parses and validates a configuration. Unknown keys and function families
/// are rejected, and the problem is assembled once to check its shapes.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    if text.trim().is_empty() {
        return Err(ConfigError::Empty);
    }
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(v) = o.max_iters {
            self.stop.max_iters = v;
        }
        if let Some(v) = o.tol {
            self.stop.tol = v;
        }
        if let Some(v) = o.gamma {
            self.gamma = Some(v);
        }
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.output {
            self.output.clone_from(v);
        }
        if let Some(v) = o.solver {
            self.solver = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.stop.tol >= 0.0) {
            return invalid(format!("stop.tol must be >= 0, got {}", self.stop.tol));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return invalid(format!("gamma must be finite and > 0, got {g}"));
            }
        }
        match (&self.problem, self.solver) {
            (ProblemSpec::Bundle(_), SolverKind::ConvexMin) => {
                return invalid("solver convex_min needs a [problem.min] section".into());
            }
            (_, SolverKind::Frb | SolverKind::ConvexMin) if self.perturbation.is_some() => {
                return invalid(format!("solver {} does not take a perturbation schedule", self.solver.name()));
            }
            _ => {}
        }
        let bundle = self.bundle().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(p) = &self.perturbation {
            p.schedule(bundle.shape()).map_err(|e| ConfigError::Invalid(format!("perturbation: {e}")))?;
        }
        if let Some(s) = &self.seeds {
            let total = bundle.shape().total_dim();
            if s.x_minus1.len() != total || s.x0.len() != total {
                return invalid(format!("seeds must have length {total}"));
            }
        }
        Ok(())
    }

    pub fn bundle(&self) -> pdbrf_core::Result<pdbrf_core::OperatorBundle> {
        self.problem.bundle_spec()?.build(self.seed)
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule { max_iters: self.stop.max_iters, tol: self.stop.tol, record_wall_time: self.record_wall_time }
    }

    pub fn seeds_for(&self, shape: &SpaceShape) -> pdbrf_core::Result<Seeds> {
        match &self.seeds {
            None => Ok(Seeds { x_minus1: BlockVector::zeros(shape), x0: BlockVector::zeros(shape) }),
            Some(s) => Ok(Seeds {
                x_minus1: BlockVector::from_flat(shape, &s.x_minus1)?,
                x0: BlockVector::from_flat(shape, &s.x0)?,
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations serialize")
    }
}
