//! The primal-dual backward-reflected-forward iteration.
//!
//! With `(y_n, w_n) = J_{γA}(x_n, v_n)` (shifted by `z` and `r_i`), one step reads
//!
//! ```text
//! x_{n+1}   = y_n − γ Σ_i L_i*(2w_{i,n} − w_{i,n−1}) − γ(2Q_n y_n − Q y_{n−1}) − γ B_n y_n
//! v_{i,n+1} = w_{i,n} − γ(2Q_{i,n} w_{i,n} − Q_i w_{i,n−1}) + γ L_i(2y_n − y_{n−1}) − γ B_{i,n} w_{i,n}
//! ```
//!
//! The reflection values `Q y_{n−1}` are the ones stored from the previous
//! step, so every single-valued operator, `L_i` and `L_i*` is evaluated once
//! per step. [`product_form_step`] runs the same method in the compact form
//! `x_{n+1} = y_n − γ(2S_n y_n − S y_{n−1}) − γ B_n y_n` on the product space.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::block::{block_norm, BlockVector};
use crate::error::{Error, Result};
use crate::inexact::{kappa_sup, PerturbationSchedule, PerturbedBundleAtN};
use crate::linalg;
use crate::product::{apply_b, apply_resolvent, apply_s, OperatorBundle};

/// Runs abort once `‖x_n‖` exceeds this.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Factor applied to `β′` to obtain `β`.
pub const BETA_FRACTION: f64 = 0.99;

/// Slack allowed when validating a user-supplied γ.
const GAMMA_CHECK_TOL: f64 = 1e-12;

/// Step size together with the constants that certify it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub gamma: f64,
    pub epsilon: f64,
    pub kappa_sup: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub mu: f64,
}

fn check_constants(beta_prime: f64, mu: f64, kappa_sup: f64, epsilon: f64) -> Result<()> {
    if !(beta_prime > 0.0) {
        return Err(Error::InvalidParameter(format!("beta_prime must be > 0, got {beta_prime}")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
    }
    if !(kappa_sup >= 0.0) || !kappa_sup.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa_sup must be finite and >= 0, got {kappa_sup}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::StepSize(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

fn margin_of(gamma: f64, beta: f64, mu: f64, kappa_sup: f64) -> f64 {
    1.0 - gamma / (2.0 * beta) - 2.0 * gamma * mu - 7.0 * gamma * kappa_sup
}

/// Largest γ with `1 − γ/(2β) − 2γμ − 7γκ = ε`, where `β = 0.99 β′`.
pub fn choose_gamma(beta_prime: f64, mu: f64, kappa_sup: f64, epsilon: f64) -> Result<StepPolicy> {
    check_constants(beta_prime, mu, kappa_sup, epsilon)?;
    let beta = BETA_FRACTION * beta_prime;
    let denom = 1.0 / (2.0 * beta) + 2.0 * mu + 7.0 * kappa_sup;
    if denom <= 0.0 {
        return Err(Error::StepSize("no finite step size: beta is infinite and mu = kappa_sup = 0".into()));
    }
    let gamma = (1.0 - epsilon) / denom;
    Ok(StepPolicy { gamma, epsilon, kappa_sup, beta, beta_prime, mu })
}

impl StepPolicy {
    /// Validates a user-chosen γ against the step-size inequality.
    pub fn with_gamma(gamma: f64, beta_prime: f64, mu: f64, kappa_sup: f64, epsilon: f64) -> Result<Self> {
        check_constants(beta_prime, mu, kappa_sup, epsilon)?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::StepSize(format!("gamma must be finite and > 0, got {gamma}")));
        }
        let beta = BETA_FRACTION * beta_prime;
        let margin = margin_of(gamma, beta, mu, kappa_sup);
        if margin < epsilon - GAMMA_CHECK_TOL {
            return Err(Error::StepSize(format!(
                "step size violates 1 − γ/(2β) − 2γμ − 7γκ ≥ ε: with γ = {gamma}, β = {beta}, μ = {mu}, \
                 κ = {kappa_sup} the left side is {margin} < ε = {epsilon}"
            )));
        }
        Ok(Self { gamma, epsilon, kappa_sup, beta, beta_prime, mu })
    }

    /// Policy for a bundle and optional schedule: constants from the bundle,
    /// γ chosen or validated.
    pub fn for_bundle(
        bundle: &OperatorBundle,
        schedule: Option<&PerturbationSchedule>,
        epsilon: f64,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let mu = bundle.lipschitz_mu()?;
        let kappa = match schedule {
            Some(s) => {
                s.check_shape(bundle.shape())?;
                kappa_sup(s)?
            }
            None => 0.0,
        };
        match gamma {
            Some(g) => Self::with_gamma(g, bundle.beta_prime(), mu, kappa, epsilon),
            None => choose_gamma(bundle.beta_prime(), mu, kappa, epsilon),
        }
    }

    /// `1 − γ/(2β) − 2γμ − 7γκ`.
    pub fn margin(&self) -> f64 {
        margin_of(self.gamma, self.beta, self.mu, self.kappa_sup)
    }
}

/// Starting points `x_{−1}` and `x_0` (primal and dual blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    pub x_minus1: BlockVector,
    pub x0: BlockVector,
}

impl Seeds {
    pub fn zeros(bundle: &OperatorBundle) -> Self {
        let z = BlockVector::zeros(bundle.shape());
        Self { x_minus1: z.clone(), x0: z }
    }

    /// `x_{−1} = x_0 = x`.
    pub fn repeated(x: BlockVector) -> Self {
        Self { x_minus1: x.clone(), x0: x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_iters: usize,
    /// Threshold on `max(‖p_{n+1}‖, max_i ‖q_{i,n+1}‖)`.
    pub tol: f64,
    /// Fill `wall_time_ns` in the history; off keeps histories reproducible.
    pub record_wall_time: bool,
}

impl StopRule {
    pub fn new(max_iters: usize, tol: f64) -> Self {
        Self { max_iters, tol, record_wall_time: false }
    }
}

impl Default for StopRule {
    fn default() -> Self {
        Self::new(10_000, 1e-8)
    }
}

/// Iterates after `n` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    x: BlockVector,
    y_prev: BlockVector,
    y_curr: BlockVector,
    q_prev: BlockVector,
    n: usize,
}

impl SolverState {
    /// `(x_n, v_{i,n})`.
    pub fn x(&self) -> &BlockVector {
        &self.x
    }

    /// `(y_{n−1}, w_{i,n−1})`.
    pub fn y_prev(&self) -> &BlockVector {
        &self.y_prev
    }

    /// `(y_n, w_{i,n}) = J_{γA}(x_n, v_{i,n})`.
    pub fn y_curr(&self) -> &BlockVector {
        &self.y_curr
    }

    /// Stored `(Q y_{n−1}, Q_i w_{i,n−1})` used in the reflection.
    pub fn q_prev(&self) -> &BlockVector {
        &self.q_prev
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn check_seeds(bundle: &OperatorBundle, seeds: &Seeds) -> Result<()> {
    bundle.check_shape(&seeds.x_minus1)?;
    bundle.check_shape(&seeds.x0)?;
    if !seeds.x_minus1.is_finite() || !seeds.x0.is_finite() {
        return Err(Error::NonFinite("seed".into()));
    }
    Ok(())
}

fn check_schedule(bundle: &OperatorBundle, schedule: Option<&PerturbationSchedule>) -> Result<()> {
    if let Some(s) = schedule {
        s.check_shape(bundle.shape())?;
    }
    Ok(())
}

fn apply_q(ops: &PerturbedBundleAtN<'_>, u: &BlockVector) -> BlockVector {
    let primal = ops.q(0, u.primal());
    let duals = (0..ops.bundle().m()).map(|i| ops.q(i + 1, u.dual(i))).collect();
    BlockVector::from_parts(primal, duals)
}

/// `y_{−1} = J(x_{−1})`, `y_0 = J(x_0)` and the reflection memory `Q_0 y_{−1}`.
pub fn init(
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    policy: &StepPolicy,
    seeds: &Seeds,
) -> Result<SolverState> {
    check_seeds(bundle, seeds)?;
    check_schedule(bundle, schedule)?;
    let y_prev = apply_resolvent(bundle, policy.gamma, &seeds.x_minus1);
    let y_curr = apply_resolvent(bundle, policy.gamma, &seeds.x0);
    let q_prev = apply_q(&PerturbedBundleAtN::at(bundle, schedule, 0), &y_prev);
    Ok(SolverState { x: seeds.x0.clone(), y_prev, y_curr, q_prev, n: 0 })
}

fn check_divergence(n: usize, x: &BlockVector, y: &BlockVector) -> Result<()> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Diverged { n, reason: "non-finite iterate".into() });
    }
    let size = block_norm(x);
    if size > DIVERGENCE_BOUND {
        return Err(Error::Diverged { n, reason: format!("iterate norm {size:e} exceeds {DIVERGENCE_BOUND:e}") });
    }
    Ok(())
}

/// One iteration in blockwise form, using the operators of step `state.n()`.
pub fn brf_step(
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    policy: &StepPolicy,
    state: &SolverState,
) -> Result<SolverState> {
    bundle.check_shape(&state.x)?;
    check_schedule(bundle, schedule)?;
    let ops = PerturbedBundleAtN::at(bundle, schedule, state.n);
    let g = policy.gamma;
    let (y, yp) = (&state.y_curr, &state.y_prev);

    let qy = ops.q(0, y.primal());
    let by = ops.b(0, y.primal());
    let mut coupling = vec![0.0; y.primal().len()];
    for (i, d) in bundle.duals().iter().enumerate() {
        let lt = d.l.adjoint(&linalg::lincomb(2.0, y.dual(i), -1.0, yp.dual(i)));
        for (c, t) in coupling.iter_mut().zip(&lt) {
            *c += t;
        }
    }
    let qp = state.q_prev.primal();
    let x_primal: Vec<f64> = (0..qy.len())
        .map(|j| y.primal()[j] - g * coupling[j] - g * (2.0 * qy[j] - qp[j]) - g * by[j])
        .collect();

    let refl = linalg::lincomb(2.0, y.primal(), -1.0, yp.primal());
    let mut q_duals = Vec::with_capacity(bundle.m());
    let mut x_duals = Vec::with_capacity(bundle.m());
    for (i, d) in bundle.duals().iter().enumerate() {
        let w = y.dual(i);
        let qw = ops.q(i + 1, w);
        let bw = ops.b(i + 1, w);
        let lc = d.l.apply(&refl);
        let qwp = state.q_prev.dual(i);
        let v: Vec<f64> =
            (0..w.len()).map(|j| w[j] - g * (2.0 * qw[j] - qwp[j]) + g * lc[j] - g * bw[j]).collect();
        q_duals.push(qw);
        x_duals.push(v);
    }

    let x = BlockVector::from_parts(x_primal, x_duals);
    let y_next = apply_resolvent(bundle, g, &x);
    check_divergence(state.n + 1, &x, &y_next)?;
    Ok(SolverState {
        x,
        y_prev: state.y_curr.clone(),
        y_curr: y_next,
        q_prev: BlockVector::from_parts(qy, q_duals),
        n: state.n + 1,
    })
}

/// `p_{n+1}` and `q_{i,n+1}` for a state after `n + 1 ≥ 1` steps, evaluated
/// with the operators of step `n`. These evaluations are extra to the step.
pub fn residuals(
    state: &SolverState,
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if state.n == 0 {
        return Err(Error::NoCompletedStep);
    }
    bundle.check_shape(&state.x)?;
    check_schedule(bundle, schedule)?;
    if !state.x.is_finite() || !state.y_curr.is_finite() {
        return Err(Error::NonFinite("iterate".into()));
    }
    let ops = PerturbedBundleAtN::at(bundle, schedule, state.n - 1);
    let (x, y) = (&state.x, &state.y_curr);

    let by = ops.b(0, y.primal());
    let qy = ops.q(0, y.primal());
    let mut p: Vec<f64> =
        (0..by.len()).map(|j| (x.primal()[j] - y.primal()[j]) / gamma + by[j] + qy[j]).collect();
    for (i, d) in bundle.duals().iter().enumerate() {
        linalg::axpy(&mut p, 1.0, &d.l.adjoint(y.dual(i)));
    }

    let q: Vec<Vec<f64>> = bundle
        .duals()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (v, w) = (x.dual(i), y.dual(i));
            let bw = ops.b(i + 1, w);
            let qw = ops.q(i + 1, w);
            let ly = d.l.apply(y.primal());
            (0..w.len()).map(|j| (v[j] - w[j]) / gamma + bw[j] + qw[j] - ly[j]).collect()
        })
        .collect();

    if !linalg::all_finite(&p) || q.iter().any(|qi| !linalg::all_finite(qi)) {
        return Err(Error::NonFinite("residual".into()));
    }
    Ok((p, q))
}

/// `p_{n+1} = (x_{n+1} − y_{n+1})/γ + B_n y_{n+1} + Q_n y_{n+1} + Σ L_i* w_{i,n+1}`.
pub fn primal_residual(
    state: &SolverState,
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    gamma: f64,
) -> Result<Vec<f64>> {
    residuals(state, bundle, schedule, gamma).map(|(p, _)| p)
}

/// `q_{i,n+1} = (v_{i,n+1} − w_{i,n+1})/γ + B_{i,n} w_{i,n+1} + Q_{i,n} w_{i,n+1} − L_i y_{n+1}`.
pub fn dual_residuals(
    state: &SolverState,
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    residuals(state, bundle, schedule, gamma).map(|(_, q)| q)
}

/// `(Id − γS − γB) x̄`, the limit of the raw iterates `(x_n, v_{i,n})` when
/// `x̄` solves the problem.
pub fn limit_point_formula(bundle: &OperatorBundle, gamma: f64, xbar: &BlockVector) -> Result<BlockVector> {
    bundle.check_shape(xbar)?;
    let ops = PerturbedBundleAtN::exact(bundle);
    let s = apply_s(&ops, xbar);
    let b = apply_b(&ops, xbar);
    let sb = BlockVector::combine_unchecked(1.0, &s, 1.0, &b);
    Ok(BlockVector::combine_unchecked(1.0, xbar, -gamma, &sb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    /// Number of completed steps.
    pub n: usize,
    /// `‖y_n − y_{n−1}‖²` over all blocks.
    pub step_norm_sq: f64,
    pub primal_residual_norm: f64,
    pub dual_residual_norms: Vec<f64>,
    pub cumulative_step_sum: f64,
    /// Elapsed time since the start of the run; 0 unless requested.
    pub wall_time_ns: u64,
}

impl IterateRecord {
    pub fn max_residual(&self) -> f64 {
        self.dual_residual_norms.iter().fold(self.primal_residual_norm, |a, &b| a.max(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterationLimit,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// `(y_n, w_{1,n}, …, w_{m,n})` of the last finite state.
    pub solution: BlockVector,
    pub history: Vec<IterateRecord>,
    pub status: RunStatus,
    pub final_state: SolverState,
    /// Reason reported when the run diverged.
    pub divergence: Option<String>,
}

/// Runs [`brf_step`] until the residual test passes or the budget is spent.
pub fn run(
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    policy: &StepPolicy,
    seeds: &Seeds,
    stop: &StopRule,
) -> Result<RunOutput> {
    if let Some(s) = schedule {
        s.check_shape(bundle.shape())?;
        let sup = kappa_sup(s)?;
        if sup > policy.kappa_sup {
            return Err(Error::StepSize(format!(
                "schedule has sup κ_n = {sup}, the step policy was built for {}",
                policy.kappa_sup
            )));
        }
    }
    let start = Instant::now();
    let mut state = init(bundle, schedule, policy, seeds)?;
    let mut history = Vec::new();
    let mut cumulative = 0.0;

    for _ in 0..stop.max_iters {
        let next = match brf_step(bundle, schedule, policy, &state) {
            Ok(s) => s,
            Err(Error::Diverged { n, reason }) => {
                return Ok(RunOutput {
                    solution: state.y_curr.clone(),
                    history,
                    status: RunStatus::Diverged,
                    final_state: state,
                    divergence: Some(format!("step {n}: {reason}")),
                })
            }
            Err(e) => return Err(e),
        };
        let (p, q) = match residuals(&next, bundle, schedule, policy.gamma) {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => {
                return Ok(RunOutput {
                    solution: state.y_curr.clone(),
                    history,
                    status: RunStatus::Diverged,
                    final_state: state,
                    divergence: Some(format!("step {}: non-finite {what}", next.n)),
                })
            }
            Err(e) => return Err(e),
        };
        state = next;
        let step_norm_sq = state.y_curr.distance(&state.y_prev)?.powi(2);
        cumulative += step_norm_sq;
        let record = IterateRecord {
            n: state.n,
            step_norm_sq,
            primal_residual_norm: linalg::norm(&p),
            dual_residual_norms: q.iter().map(|qi| linalg::norm(qi)).collect(),
            cumulative_step_sum: cumulative,
            wall_time_ns: if stop.record_wall_time { start.elapsed().as_nanos() as u64 } else { 0 },
        };
        let done = record.max_residual() <= stop.tol;
        history.push(record);
        if done {
            return Ok(RunOutput {
                solution: state.y_curr.clone(),
                history,
                status: RunStatus::Converged,
                final_state: state,
                divergence: None,
            });
        }
    }
    Ok(RunOutput {
        solution: state.y_curr.clone(),
        history,
        status: RunStatus::IterationLimit,
        final_state: state,
        divergence: None,
    })
}

/// Iterates of the compact product-space form.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductFormState {
    pub x: BlockVector,
    pub y_prev: BlockVector,
    pub y_curr: BlockVector,
    /// `S y_{n−1}` stored from the previous step.
    pub s_prev: BlockVector,
    pub n: usize,
}

pub fn product_form_init(
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    policy: &StepPolicy,
    seeds: &Seeds,
) -> Result<ProductFormState> {
    check_seeds(bundle, seeds)?;
    check_schedule(bundle, schedule)?;
    let y_prev = apply_resolvent(bundle, policy.gamma, &seeds.x_minus1);
    let y_curr = apply_resolvent(bundle, policy.gamma, &seeds.x0);
    let s_prev = apply_s(&PerturbedBundleAtN::at(bundle, schedule, 0), &y_prev);
    Ok(ProductFormState { x: seeds.x0.clone(), y_prev, y_curr, s_prev, n: 0 })
}

/// `x_{n+1} = y_n − γ(2S_n y_n − S y_{n−1}) − γ B_n y_n`, `y_{n+1} = J(x_{n+1})`.
pub fn product_form_step(
    bundle: &OperatorBundle,
    schedule: Option<&PerturbationSchedule>,
    policy: &StepPolicy,
    state: &ProductFormState,
) -> Result<ProductFormState> {
    bundle.check_shape(&state.x)?;
    check_schedule(bundle, schedule)?;
    let ops = PerturbedBundleAtN::at(bundle, schedule, state.n);
    let g = policy.gamma;
    let y = state.y_curr.flatten();
    let sy = apply_s(&ops, &state.y_curr);
    let by = apply_b(&ops, &state.y_curr).flatten();
    let (syf, sp) = (sy.flatten(), state.s_prev.flatten());
    let x: Vec<f64> = (0..y.len()).map(|j| y[j] - g * (2.0 * syf[j] - sp[j]) - g * by[j]).collect();
    let x = BlockVector::from_flat_unchecked(bundle.shape(), &x);
    let y_next = apply_resolvent(bundle, g, &x);
    check_divergence(state.n + 1, &x, &y_next)?;
    Ok(ProductFormState { x, y_prev: state.y_curr.clone(), y_curr: y_next, s_prev: sy, n: state.n + 1 })
}
