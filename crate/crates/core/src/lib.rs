//! Primal-dual backward-reflected-forward splitting.
//!
//! Solves the primal inclusion
//!
//! ```text
//! find x ∈ H:  z ∈ A x + Σ_i L_i* ((A_i + B_i + Q_i)^{-1} (L_i x − r_i)) + B x + Q x
//! ```
//!
//! together with its dual, where `A, A_i` are maximally monotone (given by
//! their resolvents), `B, B_i` are cocoercive and `Q, Q_i` are monotone and
//! Lipschitz. Each iteration uses one resolvent of every set-valued block
//! and one evaluation of every single-valued operator, `L_i` and `L_i*`.
//!
//! Module map:
//!
//! - [`block`]: the product space `H ⊕ G_1 ⊕ … ⊕ G_m`
//! - [`operators`]: operator types, closed-form proximity operators, norms
//! - [`product`]: problem data and the assembled product-space operators
//! - [`inexact`]: summable perturbations of the single-valued operators
//! - [`brf`]: the main iteration, step sizes and residual certificates
//! - [`frb`]: the single-inclusion forward-reflected-backward baseline
//! - [`convex`]: structured convex minimization front end
//! - [`oracles`]: independent reference solvers
//! - [`registry`]: serializable descriptions of functions and operators
//! - [`suite`]: reference problems used by tests, benches and examples

pub mod block;
pub mod brf;
pub mod convex;
mod error;
pub mod frb;
pub mod inexact;
pub(crate) mod linalg;
pub mod operators;
pub mod oracles;
pub mod product;
pub mod registry;
pub mod suite;

pub use block::{block_combine, block_dot, block_norm, BlockVector, SpaceShape};
pub use brf::{
    brf_step, choose_gamma, init, run, IterateRecord, RunOutput, RunStatus, Seeds, SolverState, StepPolicy,
    StopRule,
};
pub use convex::{solve_min, MinProblem, MinSolution};
pub use error::{Error, Result};
pub use frb::{frb_run, SingleInclusion};
pub use inexact::{KappaSequence, PerturbationSchedule};
pub use operators::{
    CocoerciveOperator, LinearMap, LipschitzMonotoneOperator, ProxFunction, ResolventOperator,
};
pub use oracles::{kkt_residual, OracleMethod, OracleSolution};
pub use product::{DualBlock, OperatorBundle, PrimalBlock};
pub use registry::{BundleSpec, MinProblemSpec};
