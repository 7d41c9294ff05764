//! Forward-reflected-backward splitting for a single inclusion
//! `0 ∈ Ax + Bx + Qx`:
//!
//! ```text
//! y_n     = J_{γA} x_n
//! x_{n+1} = y_n − γ(2Q y_n − Q y_{n−1}) − γ B y_n
//! ```
//!
//! converging for `0 < γ < 2β/(1 + 4βμ)`.

use std::sync::Arc;

use crate::block::BlockVector;
use crate::brf::{RunStatus, StopRule, DIVERGENCE_BOUND};
use crate::error::{Error, Result};
use crate::inexact::PerturbedBundleAtN;
use crate::linalg;
use crate::operators::{CocoerciveOperator, LipschitzMonotoneOperator, ResolventOperator};
use crate::product::{apply_b, apply_resolvent, apply_s, OperatorBundle};

/// Fraction of [`frb_gamma_bound`] used when no step size is given.
pub const FRB_GAMMA_FRACTION: f64 = 0.99;

#[derive(Debug, Clone)]
pub struct SingleInclusion {
    pub a: ResolventOperator,
    pub b: CocoerciveOperator,
    pub q: LipschitzMonotoneOperator,
    dim: usize,
}

impl SingleInclusion {
    pub fn new(a: ResolventOperator, b: CocoerciveOperator, q: LipschitzMonotoneOperator) -> Result<Self> {
        let dim = a.dim();
        if b.dim() != dim || q.dim() != dim {
            return Err(Error::Shape(format!(
                "operator dimensions differ: A {dim}, B {}, Q {}",
                b.dim(),
                q.dim()
            )));
        }
        Ok(Self { a, b, q, dim })
    }

    /// The triple `(bold A, bold B, S)` of a bundle on the flattened product
    /// space, with `β = β′` and `μ` from the bundle's norm bounds.
    pub fn from_bundle(bundle: &OperatorBundle) -> Result<Self> {
        let mu = bundle.lipschitz_mu()?;
        let shape = bundle.shape().clone();
        let dim = shape.total_dim();
        let bundle = Arc::new(bundle.clone());

        let (bd, sh) = (Arc::clone(&bundle), shape.clone());
        let a = ResolventOperator::new(dim, move |gamma, x| {
            apply_resolvent(&bd, gamma, &BlockVector::from_flat_unchecked(&sh, x)).flatten()
        });
        let (bd, sh) = (Arc::clone(&bundle), shape.clone());
        let b = CocoerciveOperator::new(dim, bundle.beta_prime(), move |x: &[f64]| {
            apply_b(&PerturbedBundleAtN::exact(&bd), &BlockVector::from_flat_unchecked(&sh, x)).flatten()
        })?;
        let (bd, sh) = (Arc::clone(&bundle), shape);
        let q = LipschitzMonotoneOperator::new(dim, mu, move |x: &[f64]| {
            apply_s(&PerturbedBundleAtN::exact(&bd), &BlockVector::from_flat_unchecked(&sh, x)).flatten()
        })?;
        Ok(Self { a, b, q, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `2β/(1 + 4βμ)`; `1/(2μ)` when `β = ∞`.
pub fn frb_gamma_bound(beta: f64, mu: f64) -> f64 {
    if beta.is_infinite() {
        return if mu > 0.0 { 1.0 / (2.0 * mu) } else { f64::INFINITY };
    }
    2.0 * beta / (1.0 + 4.0 * beta * mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrbState {
    pub x: Vec<f64>,
    pub y_prev: Vec<f64>,
    pub y_curr: Vec<f64>,
    /// `Q y_{n−1}` stored from the previous step.
    pub q_prev: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrbRecord {
    pub n: usize,
    pub step_norm_sq: f64,
    /// `‖(x_n − y_n)/γ + B y_n + Q y_n‖`.
    pub residual_norm: f64,
    pub cumulative_step_sum: f64,
}

#[derive(Debug, Clone)]
pub struct FrbOutput {
    pub solution: Vec<f64>,
    pub history: Vec<FrbRecord>,
    pub status: RunStatus,
    pub final_state: FrbState,
}

fn check_gamma(problem: &SingleInclusion, gamma: f64) -> Result<()> {
    let bound = frb_gamma_bound(problem.b.beta(), problem.q.mu());
    if !(gamma > 0.0 && gamma < bound) {
        return Err(Error::StepSize(format!("gamma must lie in (0, 2β/(1+4βμ)) = (0, {bound}), got {gamma}")));
    }
    Ok(())
}

/// `y_{−1} = J x_{−1}`, `y_0 = J x_0`, memory `Q y_{−1}`.
pub fn frb_init(problem: &SingleInclusion, gamma: f64, x_minus1: &[f64], x0: &[f64]) -> Result<FrbState> {
    check_gamma(problem, gamma)?;
    for s in [x_minus1, x0] {
        if s.len() != problem.dim {
            return Err(Error::Shape(format!("seed has length {}, expected {}", s.len(), problem.dim)));
        }
        if !linalg::all_finite(s) {
            return Err(Error::NonFinite("seed".into()));
        }
    }
    let y_prev = problem.a.eval(gamma, x_minus1);
    let y_curr = problem.a.eval(gamma, x0);
    let q_prev = problem.q.apply(&y_prev);
    Ok(FrbState { x: x0.to_vec(), y_prev, y_curr, q_prev, n: 0 })
}

pub fn frb_step(problem: &SingleInclusion, gamma: f64, state: &FrbState) -> Result<FrbState> {
    let y = &state.y_curr;
    let qy = problem.q.apply(y);
    let by = problem.b.apply(y);
    let x: Vec<f64> =
        (0..y.len()).map(|j| y[j] - gamma * (2.0 * qy[j] - state.q_prev[j]) - gamma * by[j]).collect();
    let y_next = problem.a.eval(gamma, &x);
    let n = state.n + 1;
    if !linalg::all_finite(&x) || !linalg::all_finite(&y_next) {
        return Err(Error::Diverged { n, reason: "non-finite iterate".into() });
    }
    if linalg::norm(&x) > DIVERGENCE_BOUND {
        return Err(Error::Diverged { n, reason: format!("iterate norm exceeds {DIVERGENCE_BOUND:e}") });
    }
    Ok(FrbState { x, y_prev: state.y_curr.clone(), y_curr: y_next, q_prev: qy, n })
}

/// `(x_n − y_n)/γ + B y_n + Q y_n`, an element of `(A + B + Q) y_n`.
pub fn frb_residual(problem: &SingleInclusion, gamma: f64, state: &FrbState) -> Vec<f64> {
    let (x, y) = (&state.x, &state.y_curr);
    let by = problem.b.apply(y);
    let qy = problem.q.apply(y);
    (0..y.len()).map(|j| (x[j] - y[j]) / gamma + by[j] + qy[j]).collect()
}

fn residual_norm(problem: &SingleInclusion, gamma: f64, state: &FrbState) -> f64 {
    linalg::norm(&frb_residual(problem, gamma, state))
}

/// Iterates until the residual falls below `stop.tol` or the budget is spent.
pub fn frb_run(
    problem: &SingleInclusion,
    gamma: f64,
    x_minus1: &[f64],
    x0: &[f64],
    stop: &StopRule,
) -> Result<FrbOutput> {
    let mut state = frb_init(problem, gamma, x_minus1, x0)?;
    let mut history = Vec::new();
    let mut cumulative = 0.0;
    for _ in 0..stop.max_iters {
        state = match frb_step(problem, gamma, &state) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => {
                return Ok(FrbOutput {
                    solution: state.y_curr.clone(),
                    history,
                    status: RunStatus::Diverged,
                    final_state: state,
                })
            }
            Err(e) => return Err(e),
        };
        let step_norm_sq = linalg::dist(&state.y_curr, &state.y_prev).powi(2);
        cumulative += step_norm_sq;
        let residual = residual_norm(problem, gamma, &state);
        history.push(FrbRecord { n: state.n, step_norm_sq, residual_norm: residual, cumulative_step_sum: cumulative });
        if residual <= stop.tol {
            return Ok(FrbOutput {
                solution: state.y_curr.clone(),
                history,
                status: RunStatus::Converged,
                final_state: state,
            });
        }
    }
    Ok(FrbOutput { solution: state.y_curr.clone(), history, status: RunStatus::IterationLimit, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brf::{brf_step, init, product_form_init, product_form_step, Seeds, StepPolicy};
    use crate::operators::{prox_factory, LinearMap, ProxFunction};
    use crate::product::{DualBlock, PrimalBlock};

    #[test]
    fn gamma_bound_examples() {
        assert!((frb_gamma_bound(1.0, 1.0) - 0.4).abs() < 1e-15);
        assert_eq!(frb_gamma_bound(1.5, 0.0), 3.0);
        assert_eq!(frb_gamma_bound(f64::INFINITY, 1.0), 0.5);
        assert!((frb_gamma_bound(1e12, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interval_constrained_solution() {
        let p = SingleInclusion::new(
            prox_factory(&ProxFunction::Box { lower: vec![0.0], upper: vec![1.0] }).unwrap(),
            CocoerciveOperator::scaled_identity(1, 1.0, vec![2.0]).unwrap(),
            LipschitzMonotoneOperator::zero(1),
        )
        .unwrap();
        let g = FRB_GAMMA_FRACTION * frb_gamma_bound(1.0, 0.0);
        let out = frb_run(&p, g, &[0.0], &[0.0], &StopRule::new(10_000, 1e-12)).unwrap();
        assert_eq!(out.status, RunStatus::Converged);
        assert!((out.solution[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_zero() {
        let p = SingleInclusion::new(
            ResolventOperator::zero(3),
            CocoerciveOperator::identity(3),
            LipschitzMonotoneOperator::zero(3),
        )
        .unwrap();
        let g = FRB_GAMMA_FRACTION * frb_gamma_bound(1.0, 0.0);
        let out = frb_run(&p, g, &[1.0, -2.0, 3.0], &[1.0, -2.0, 3.0], &StopRule::new(10_000, 1e-12)).unwrap();
        assert_eq!(out.status, RunStatus::Converged);
        assert!(linalg::norm(&out.solution) < 1e-12);
    }

    #[test]
    fn rotation_with_small_identity() {
        // (B + Q) x = 0 with B = 0.1 I and Q a rotation has only x = 0.
        let p = SingleInclusion::new(
            ResolventOperator::zero(2),
            CocoerciveOperator::scaled_identity(2, 0.1, vec![0.0, 0.0]).unwrap(),
            LipschitzMonotoneOperator::rotation(std::f64::consts::FRAC_PI_2, 1.0).unwrap(),
        )
        .unwrap();
        let g = FRB_GAMMA_FRACTION * frb_gamma_bound(10.0, 1.0);
        let out = frb_run(&p, g, &[1.0, 1.0], &[1.0, 1.0], &StopRule::new(100_000, 1e-12)).unwrap();
        assert_eq!(out.status, RunStatus::Converged);
        assert!(linalg::norm(&out.solution) < 1e-11);
        let tail = out.history.len() / 10;
        let sums: Vec<f64> = out.history.iter().map(|r| r.cumulative_step_sum).collect();
        assert!(sums[sums.len() - 1] - sums[sums.len() - 1 - tail] < 1e-10);
    }

    #[test]
    fn stationary_seed_is_fixed() {
        let p = SingleInclusion::new(
            prox_factory(&ProxFunction::Box { lower: vec![0.0], upper: vec![1.0] }).unwrap(),
            CocoerciveOperator::scaled_identity(1, 1.0, vec![2.0]).unwrap(),
            LipschitzMonotoneOperator::linear(nalgebra::DMatrix::from_element(1, 1, 0.5)).unwrap(),
        )
        .unwrap();
        let g = 0.5;
        // x̄ = 1: x = x̄ − γ(Q + B)x̄ = 1 − 0.5 (0.5 − 1) = 1.25
        let s = frb_init(&p, g, &[1.25], &[1.25]).unwrap();
        let t = frb_step(&p, g, &s).unwrap();
        assert_eq!(t.x, s.x);
        assert_eq!(t.y_curr, vec![1.0]);
    }

    #[test]
    fn gamma_outside_bound_is_rejected() {
        let p = SingleInclusion::new(
            ResolventOperator::zero(1),
            CocoerciveOperator::identity(1),
            LipschitzMonotoneOperator::zero(1),
        )
        .unwrap();
        assert!(frb_init(&p, 2.0, &[0.0], &[0.0]).is_err());
        assert!(frb_init(&p, 0.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn product_triple_reproduces_primal_dual_iterates() {
        let bundle = OperatorBundle::new(
            PrimalBlock {
                a: prox_factory(&ProxFunction::L1 { dim: 2, weight: 0.5 }).unwrap(),
                b: CocoerciveOperator::scaled_identity(2, 1.0, vec![2.0, -1.0]).unwrap(),
                q: LipschitzMonotoneOperator::rotation(0.3, 0.4).unwrap(),
                z: vec![0.1, 0.2],
            },
            vec![
                DualBlock {
                    a: prox_factory(&ProxFunction::Box { lower: vec![-1.0], upper: vec![0.5] }).unwrap(),
                    b: CocoerciveOperator::identity(1),
                    q: LipschitzMonotoneOperator::zero(1),
                    l: LinearMap::dense_exact_norm(nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 2.0])),
                    r: vec![0.3],
                },
                DualBlock {
                    a: ResolventOperator::zero(1),
                    b: CocoerciveOperator::scaled_identity(1, 2.0, vec![0.0]).unwrap(),
                    q: LipschitzMonotoneOperator::zero(1),
                    l: LinearMap::forward_difference(2).unwrap(),
                    r: vec![1.0],
                },
            ],
        )
        .unwrap();
        let policy = StepPolicy::for_bundle(&bundle, None, 0.01, None).unwrap();
        let single = SingleInclusion::from_bundle(&bundle).unwrap();
        let seeds = Seeds::zeros(&bundle);
        let flat0 = seeds.x0.flatten();
        let mut f = frb_init(&single, policy.gamma, &flat0, &flat0).unwrap();
        let mut pf = product_form_init(&bundle, None, &policy, &seeds).unwrap();
        let mut bw = init(&bundle, None, &policy, &seeds).unwrap();
        for _ in 0..100 {
            f = frb_step(&single, policy.gamma, &f).unwrap();
            pf = product_form_step(&bundle, None, &policy, &pf).unwrap();
            bw = brf_step(&bundle, None, &policy, &bw).unwrap();
            assert_eq!(f.x, pf.x.flatten());
            let diff = f.x.iter().zip(bw.x().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-14, "{diff}");
        }
    }
}
