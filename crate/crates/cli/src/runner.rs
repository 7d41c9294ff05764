//! Executes a configuration and collects the history and final certificate.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pdbrf_core::brf::{residuals, run, RunOutput, RunStatus, StepPolicy};
use pdbrf_core::convex::{build_inclusion, dual_objective, primal_objective, solve_min, MinProblem};
use pdbrf_core::frb::{frb_gamma_bound, frb_init, frb_residual, frb_step, SingleInclusion, FRB_GAMMA_FRACTION};
use pdbrf_core::oracles::{active_set_oracle, kkt_residual, KKT_GAMMA_PROBE};
use pdbrf_core::{BlockVector, Error, OperatorBundle, Seeds, SolverState, StopRule};

use crate::config::{ProblemSpec, Resolved, RunConfig, SolverKind};

/// Upper limit on active-set combinations tried when computing the oracle gap.
pub const ORACLE_MAX_COMBINATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub n: usize,
    pub step_norm_sq: f64,
    pub cum_step_sum: f64,
    pub primal_residual_norm: f64,
    pub dual_residual_norms: Vec<f64>,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub status: RunStatus,
    pub iterations: usize,
    pub gamma: f64,
    pub solution_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_norm: Option<f64>,
    pub q_norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_objective: Option<f64>,
    /// Primal plus dual objective; zero exactly at a saddle point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality_gap: Option<f64>,
    /// Block distance to the active-set reference solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_distance: Option<f64>,
    /// Primal objective minus its value at the reference solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
    pub solution_primal: Vec<f64>,
    pub solution_duals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// The configuration with γ and the computed constants filled in.
    pub manifest: RunConfig,
    pub history: Vec<HistoryRow>,
    pub certificate: Certificate,
}

impl RunReport {
    pub fn status(&self) -> RunStatus {
        self.certificate.status
    }
}

pub fn exit_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Converged => 0,
        RunStatus::IterationLimit => 2,
        RunStatus::Diverged => 3,
    }
}

struct Trace {
    status: RunStatus,
    history: Vec<HistoryRow>,
    solution: BlockVector,
    residuals: Option<(Vec<f64>, Vec<Vec<f64>>)>,
    divergence: Option<String>,
}

fn rows_of(out: &RunOutput) -> Vec<HistoryRow> {
    out.history
        .iter()
        .map(|r| HistoryRow {
            n: r.n,
            step_norm_sq: r.step_norm_sq,
            cum_step_sum: r.cumulative_step_sum,
            primal_residual_norm: r.primal_residual_norm,
            dual_residual_norms: r.dual_residual_norms.clone(),
            wall_time_ns: r.wall_time_ns,
        })
        .collect()
}

fn final_residuals(
    state: &SolverState,
    bundle: &OperatorBundle,
    schedule: Option<&pdbrf_core::PerturbationSchedule>,
    gamma: f64,
) -> Result<Option<(Vec<f64>, Vec<Vec<f64>>)>> {
    match residuals(state, bundle, schedule, gamma) {
        Ok(r) => Ok(Some(r)),
        Err(Error::NoCompletedStep | Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn trace_of(out: RunOutput, bundle: &OperatorBundle, schedule: Option<&pdbrf_core::PerturbationSchedule>, gamma: f64) -> Result<Trace> {
    let residuals = final_residuals(&out.final_state, bundle, schedule, gamma)?;
    Ok(Trace {
        status: out.status,
        history: rows_of(&out),
        solution: out.solution,
        residuals,
        divergence: out.divergence,
    })
}

fn resolved_of(solver: SolverKind, policy: &StepPolicy, bundle: &OperatorBundle) -> Resolved {
    Resolved {
        solver,
        gamma: policy.gamma,
        epsilon: policy.epsilon,
        beta_prime: policy.beta_prime,
        mu: policy.mu,
        kappa_sup: policy.kappa_sup,
        beta: Some(policy.beta),
        margin: Some(policy.margin()),
        gamma_bound: None,
        dual_blocks: bundle.m(),
        total_dim: bundle.shape().total_dim(),
    }
}

fn run_frb(bundle: &OperatorBundle, gamma: f64, seeds: &Seeds, stop: &StopRule) -> Result<Trace> {
    let triple = SingleInclusion::from_bundle(bundle)?;
    let shape = bundle.shape();
    let mut state = frb_init(&triple, gamma, &seeds.x_minus1.flatten(), &seeds.x0.flatten())?;
    let start = std::time::Instant::now();
    let split = |state: &pdbrf_core::frb::FrbState| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let r = BlockVector::from_flat(shape, &frb_residual(&triple, gamma, state))?;
        Ok(r.into_parts())
    };
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let mut history = Vec::new();
    let mut cumulative = 0.0;
    let mut status = RunStatus::IterationLimit;
    let mut divergence = None;
    for _ in 0..stop.max_iters {
        let next = match frb_step(&triple, gamma, &state) {
            Ok(s) => s,
            Err(Error::Diverged { n, reason }) => {
                status = RunStatus::Diverged;
                divergence = Some(format!("step {n}: {reason}"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        state = next;
        let step_norm_sq: f64 = state.y_curr.iter().zip(&state.y_prev).map(|(a, b)| (a - b) * (a - b)).sum();
        cumulative += step_norm_sq;
        let (p, q) = split(&state)?;
        let row = HistoryRow {
            n: state.n,
            step_norm_sq,
            cum_step_sum: cumulative,
            primal_residual_norm: norm(&p),
            dual_residual_norms: q.iter().map(|v| norm(v)).collect(),
            wall_time_ns: if stop.record_wall_time { start.elapsed().as_nanos() as u64 } else { 0 },
        };
        let done = row.dual_residual_norms.iter().fold(row.primal_residual_norm, |m, &t| m.max(t)) <= stop.tol;
        history.push(row);
        if done {
            status = RunStatus::Converged;
            break;
        }
    }
    let residuals = if state.n > 0 { Some(split(&state)?) } else { None };
    Ok(Trace {
        status,
        history,
        solution: BlockVector::from_flat(shape, &state.y_curr)?,
        residuals,
        divergence,
    })
}

/// Runs the configured solver. Invalid step sizes and malformed problems are
/// errors; divergence is reported through the certificate status.
pub fn execute(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let spec = cfg.problem.bundle_spec()?;
    let bundle = spec.build(cfg.seed)?;
    let seeds = cfg.seeds_for(bundle.shape())?;
    let stop = cfg.stop_rule();
    let min_problem: Option<MinProblem> = match &cfg.problem {
        ProblemSpec::Min(m) => Some(m.build(cfg.seed)?),
        ProblemSpec::Bundle(_) => None,
    };

    let (trace, resolved, certify_bundle) = match cfg.solver {
        SolverKind::Brf => {
            let schedule = cfg.perturbation.as_ref().map(|p| p.schedule(bundle.shape())).transpose()?;
            let policy = StepPolicy::for_bundle(&bundle, schedule.as_ref(), cfg.epsilon, cfg.gamma)?;
            let out = run(&bundle, schedule.as_ref(), &policy, &seeds, &stop)?;
            let trace = trace_of(out, &bundle, schedule.as_ref(), policy.gamma)?;
            (trace, resolved_of(cfg.solver, &policy, &bundle), bundle)
        }
        SolverKind::ConvexMin => {
            let problem = min_problem.as_ref().context("solver convex_min needs a minimization problem")?;
            let inclusion = build_inclusion(problem)?;
            let policy = StepPolicy::for_bundle(&inclusion, None, cfg.epsilon, cfg.gamma)?;
            let sol = solve_min(problem, &policy, &seeds, &stop)?;
            let trace = trace_of(sol.output, &inclusion, None, policy.gamma)?;
            (trace, resolved_of(cfg.solver, &policy, &inclusion), inclusion)
        }
        SolverKind::Frb => {
            let mu = bundle.lipschitz_mu()?;
            let beta_prime = bundle.beta_prime();
            let bound = frb_gamma_bound(beta_prime, mu);
            let gamma = match cfg.gamma {
                Some(g) => g,
                None if bound.is_finite() => FRB_GAMMA_FRACTION * bound,
                None => bail!("no finite step-size bound for the baseline; set gamma"),
            };
            let trace = run_frb(&bundle, gamma, &seeds, &stop)?;
            let resolved = Resolved {
                solver: cfg.solver,
                gamma,
                epsilon: cfg.epsilon,
                beta_prime,
                mu,
                kappa_sup: 0.0,
                beta: None,
                margin: None,
                gamma_bound: Some(bound),
                dual_blocks: bundle.m(),
                total_dim: bundle.shape().total_dim(),
            };
            (trace, resolved, bundle)
        }
    };
    let certificate = certify(&spec, &certify_bundle, min_problem.as_ref(), &trace, resolved.gamma)?;
    let mut manifest = cfg.clone();
    manifest.gamma = Some(resolved.gamma);
    manifest.resolved = Some(resolved);
    Ok(RunReport { manifest, history: trace.history, certificate })
}

fn certify(
    spec: &pdbrf_core::BundleSpec,
    bundle: &OperatorBundle,
    min_problem: Option<&MinProblem>,
    trace: &Trace,
    gamma: f64,
) -> Result<Certificate> {
    let sol = &trace.solution;
    let finite = sol.is_finite();
    let kkt = if finite { Some(kkt_residual(bundle, sol, KKT_GAMMA_PROBE)?) } else { None };
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let (p_norm, q_norms) = match &trace.residuals {
        Some((p, q)) => (Some(norm(p)), q.iter().map(|v| norm(v)).collect()),
        None => (None, Vec::new()),
    };

    let (mut primal_obj, mut dual_obj) = (None, None);
    if let (Some(p), true) = (min_problem, finite) {
        primal_obj = primal_objective(p, sol.primal());
        dual_obj = dual_objective(p, sol.duals());
    }
    let (mut oracle_distance, mut oracle_gap) = (None, None);
    if finite {
        if let Ok((exact, _)) = active_set_oracle(spec, ORACLE_MAX_COMBINATIONS) {
            oracle_distance = Some(sol.distance(&exact)?);
            if let (Some(p), Some(v)) = (min_problem, primal_obj) {
                oracle_gap = primal_objective(p, exact.primal()).map(|best| v - best);
            }
        }
    }
    let (primal, duals) = sol.clone().into_parts();
    Ok(Certificate {
        status: trace.status,
        iterations: trace.history.len(),
        gamma,
        solution_norm: sol.norm(),
        kkt_residual: kkt,
        p_norm,
        q_norms,
        primal_objective: primal_obj,
        dual_objective: dual_obj,
        duality_gap: primal_obj.zip(dual_obj).map(|(a, b)| a + b),
        oracle_distance,
        oracle_gap,
        divergence: trace.divergence.clone(),
        solution_primal: primal,
        solution_duals: duals,
    })
}
