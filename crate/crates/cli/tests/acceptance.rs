//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! report is visible in `cargo test` output; exits non-zero if any fail.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdbrf_core::brf::{
    brf_step, init, limit_point_formula, product_form_init, product_form_step, residuals, run, RunStatus, Seeds,
    StepPolicy, StopRule,
};
use pdbrf_core::frb::{frb_run, SingleInclusion};
use pdbrf_core::inexact::{audit_condition, PerturbationSchedule};
use pdbrf_core::operators::{
    check_firmly_nonexpansive, conjugate_prox, prox_factory, CallCounter, LinearMap, ProxFunction,
};
use pdbrf_core::oracles::{active_set_oracle, grid_prox_oracle, kkt_residual, KKT_GAMMA_PROBE};
use pdbrf_core::product::{resolvent_abold, DualBlock, OperatorBundle, PrimalBlock};
use pdbrf_core::suite::{self, Instance};
use pdbrf_core::BlockVector;

const MAX_ITERS: usize = 100_000;
const SOLVER_TOL: f64 = 1e-10;
const ORACLE_COMBINATIONS: usize = 200_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn random_family(rng: &mut ChaCha8Rng, separable_only: bool) -> ProxFunction {
    let n = rng.random_range(1..=3usize);
    let kinds = if separable_only { 6 } else { 8 };
    match rng.random_range(0..kinds) {
        0 => ProxFunction::Zero { dim: n },
        1 => ProxFunction::L1 { dim: n, weight: rng.random_range(0.0..3.0) },
        2 => ProxFunction::SqDist { point: uniform(rng, n, 5.0), weight: rng.random_range(0.0..3.0) },
        3 => {
            let lower = uniform(rng, n, 5.0);
            let upper = lower.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
            ProxFunction::Box { lower, upper }
        }
        4 => {
            let diag = (0..n).map(|_| rng.random_range(0.0..3.0)).collect::<Vec<f64>>();
            let p = (0..n).map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect();
            ProxFunction::Quadratic { p, b: uniform(rng, n, 3.0) }
        }
        5 => ProxFunction::Separable {
            parts: (0..n)
                .map(|_| match rng.random_range(0..3) {
                    0 => ProxFunction::L1 { dim: 1, weight: rng.random_range(0.0..3.0) },
                    1 => ProxFunction::L2Ball { center: uniform(rng, 1, 3.0), radius: rng.random_range(0.1..2.0) },
                    _ => ProxFunction::SqDist { point: uniform(rng, 1, 3.0), weight: rng.random_range(0.0..3.0) },
                })
                .collect(),
        },
        6 => ProxFunction::L2Ball { center: uniform(rng, n, 3.0), radius: rng.random_range(0.1..3.0) },
        _ => {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5));
            let p = a.transpose() * a;
            ProxFunction::Quadratic {
                p: p.row_iter().map(|r| r.iter().copied().collect()).collect(),
                b: uniform(rng, n, 3.0),
            }
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut grid_err, mut moreau_err, mut fy_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut grid_draws = 0;
    for draw in 0..1000 {
        let f = random_family(&mut rng, draw % 2 == 0);
        let gamma = rng.random_range(0.05..5.0);
        let x = uniform(&mut rng, f.dim(), 8.0);
        let j = prox_factory(&f).unwrap();
        let p = j.resolvent(gamma, &x).unwrap();
        if f.is_coordinate_separable() {
            grid_draws += 1;
            let g = grid_prox_oracle(&f, gamma, &x, 1e-9).unwrap();
            grid_err = p.iter().zip(&g).fold(grid_err, |m, (a, b)| m.max((a - b).abs()));
        }
        let scaled: Vec<f64> = x.iter().map(|t| t / gamma).collect();
        let u = conjugate_prox(&j).resolvent(1.0 / gamma, &scaled).unwrap();
        moreau_err = (0..x.len()).fold(moreau_err, |m, k| m.max((p[k] + gamma * u[k] - x[k]).abs()));
        // Fenchel-Young equality certifies u ∈ ∂f(p) independently of the identity.
        if let Some(conj) = f.conjugate_value(&u) {
            let inner: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
            let scale = 1.0 + inner.abs() + conj.abs();
            fy_err = fy_err.max((f.value(&p) + conj - inner).abs() / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        grid_err <= 1e-6 && moreau_err <= 1e-10 && fy_err <= 1e-10 && secs < 10.0,
        format!(
            "1000 draws ({grid_draws} separable): grid err {grid_err:.1e}, Moreau err {moreau_err:.1e}, \
             Fenchel-Young err {fy_err:.1e}, {secs:.2} s"
        ),
    )
}

fn random_pairs(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..count).map(|_| (uniform(rng, dim, 6.0), uniform(rng, dim, 6.0))).collect()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_fne = f64::INFINITY;
    let mut operators = 0;
    for _ in 0..16 {
        let f = random_family(&mut rng, false);
        let j = prox_factory(&f).unwrap();
        let gamma = rng.random_range(0.05..5.0);
        let pairs = random_pairs(&mut rng, f.dim(), 1000);
        worst_fne = worst_fne.min(check_firmly_nonexpansive(|x| j.resolvent(gamma, x).unwrap(), &pairs));
        let jc = conjugate_prox(&j);
        worst_fne = worst_fne.min(check_firmly_nonexpansive(|x| jc.resolvent(gamma, x).unwrap(), &pairs));
        operators += 2;
    }
    for inst in suite::all() {
        let bundle = inst.bundle().unwrap();
        let shape = bundle.shape().clone();
        let pairs = random_pairs(&mut rng, shape.total_dim(), 1000);
        let res = |x: &[f64]| {
            resolvent_abold(&bundle, 0.7, &BlockVector::from_flat(&shape, x).unwrap()).unwrap().flatten()
        };
        worst_fne = worst_fne.min(check_firmly_nonexpansive(res, &pairs));
        operators += 1;
    }

    let mut worst_adj = 0.0f64;
    let dense = LinearMap::dense(DMatrix::from_fn(3, 4, |i, j| ((i * 4 + j) as f64).sin()));
    let maps = [
        dense.clone(),
        LinearMap::diagonal(vec![1.0, -2.0, 0.5, 3.0]),
        LinearMap::identity(4),
        LinearMap::scaled_identity(4, -0.3),
        LinearMap::forward_difference(4).unwrap(),
        LinearMap::compose(&dense, &LinearMap::diagonal(vec![2.0, 1.0, -1.0, 0.5])).unwrap(),
        LinearMap::zero(2, 4),
    ];
    for l in &maps {
        for _ in 0..1000 {
            let x = uniform(&mut rng, l.in_dim(), 6.0);
            let u = uniform(&mut rng, l.out_dim(), 6.0);
            let lhs: f64 = l.apply(&x).iter().zip(&u).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(l.adjoint(&u)).map(|(a, b)| a * b).sum();
            worst_adj = worst_adj.max((lhs - rhs).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_fne >= -1e-10 && worst_adj <= 1e-10 && secs < 10.0,
        format!(
            "{operators} resolvents: min slack {worst_fne:.1e}; {} linear maps: max adjoint gap {worst_adj:.1e}; {secs:.2} s",
            maps.len()
        ),
    )
}

struct Solved {
    inst: Instance,
    bundle: OperatorBundle,
    policy: StepPolicy,
    exact: BlockVector,
    solution: BlockVector,
    status: RunStatus,
    iterations: usize,
    kkt: f64,
    last_p: f64,
    last_q: f64,
}

fn solve_suite() -> (Vec<Solved>, f64) {
    let start = Instant::now();
    let out = suite::all()
        .into_iter()
        .map(|inst| {
            let bundle = inst.bundle().unwrap();
            let policy = StepPolicy::for_bundle(&bundle, None, 0.01, None).unwrap();
            let out = run(&bundle, None, &policy, &Seeds::zeros(&bundle), &StopRule::new(MAX_ITERS, SOLVER_TOL)).unwrap();
            let (exact, _) = active_set_oracle(&inst.spec, ORACLE_COMBINATIONS).unwrap();
            let kkt = kkt_residual(&bundle, &out.solution, KKT_GAMMA_PROBE).unwrap();
            let last = out.history.last().unwrap();
            let last_q = last.dual_residual_norms.iter().cloned().fold(0.0, f64::max);
            Solved {
                last_p: last.primal_residual_norm,
                last_q,
                iterations: out.history.len(),
                status: out.status,
                solution: out.solution,
                inst,
                bundle,
                policy,
                exact,
                kkt,
            }
        })
        .collect();
    (out, start.elapsed().as_secs_f64())
}

fn criterion_3(solved: &[Solved], secs: f64) -> Outcome {
    let mut pass = secs < 60.0;
    let mut parts = Vec::new();
    for s in solved {
        let err = s.solution.distance(&s.exact).unwrap();
        pass &= s.status == RunStatus::Converged && s.kkt <= 1e-8 && err <= 1e-5;
        parts.push(format!("{} {} it kkt {:.1e} err {:.1e}", s.inst.name, s.iterations, s.kkt, err));
    }
    outcome(pass, format!("{}; {secs:.2} s", parts.join(", ")))
}

fn criterion_4(solved: &[Solved]) -> Outcome {
    let mut worst = 0.0f64;
    for s in solved {
        let stop = StopRule::new(5000, 0.0);
        let out = run(&s.bundle, None, &s.policy, &Seeds::zeros(&s.bundle), &stop).unwrap();
        let cum: Vec<f64> = out.history.iter().map(|r| r.cumulative_step_sum).collect();
        let tail = cum[cum.len() - 1] - cum[cum.len() - 1 - cum.len() / 10];
        worst = worst.max(tail);
    }
    outcome(worst < 1e-10, format!("largest tail of the step-norm sum over the last 10% of 5000 steps: {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let inst = suite::lasso();
    let bundle = inst.bundle().unwrap();
    let policy = StepPolicy::for_bundle(&bundle, None, 0.01, None).unwrap();
    let (exact, _) = active_set_oracle(&inst.spec, ORACLE_COMBINATIONS).unwrap();
    let out = run(&bundle, None, &policy, &Seeds::zeros(&bundle), &StopRule::new(MAX_ITERS, 1e-13)).unwrap();
    let err = out.solution.distance(&exact).unwrap();
    let limit = limit_point_formula(&bundle, policy.gamma, &exact).unwrap();
    let x_err = out.final_state.x().distance(&limit).unwrap();
    outcome(
        err <= 1e-8 && x_err <= 1e-6,
        format!("lasso: ‖y_n − x̄‖ = {err:.1e}, ‖x_n − limit formula‖ = {x_err:.1e} after {} steps", out.history.len()),
    )
}

fn criterion_6(solved: &[Solved]) -> Outcome {
    let converged = solved.iter().map(|s| s.last_p.max(s.last_q)).fold(0.0, f64::max);
    let mut stationary = 0.0f64;
    for s in solved {
        let x_star = limit_point_formula(&s.bundle, s.policy.gamma, &s.exact).unwrap();
        let seeds = Seeds { x_minus1: x_star.clone(), x0: x_star };
        let mut state = init(&s.bundle, None, &s.policy, &seeds).unwrap();
        for _ in 0..20 {
            state = brf_step(&s.bundle, None, &s.policy, &state).unwrap();
            let (p, q) = residuals(&state, &s.bundle, None, s.policy.gamma).unwrap();
            let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
            stationary = q.iter().fold(stationary.max(norm(&p)), |m, v| m.max(norm(v)));
        }
    }
    outcome(
        converged <= 1e-8 && stationary <= 1e-12,
        format!("final max residual on converged runs {converged:.1e}; at the stationary seed {stationary:.1e}"),
    )
}

fn criterion_7(solved: &[Solved]) -> Outcome {
    let mut worst_dist = 0.0f64;
    let mut violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut all_converged = true;
    for s in solved {
        let schedule = PerturbationSchedule::geometric(s.bundle.shape(), 0.1, 0.5).unwrap();
        let policy = StepPolicy::for_bundle(&s.bundle, Some(&schedule), 0.01, None).unwrap();
        let stop = StopRule::new(MAX_ITERS, SOLVER_TOL);
        let out = run(&s.bundle, Some(&schedule), &policy, &Seeds::zeros(&s.bundle), &stop).unwrap();
        all_converged &= out.status == RunStatus::Converged;
        worst_dist = worst_dist.max(out.solution.distance(&s.solution).unwrap());
        let shape = s.bundle.shape();
        let samples: Vec<_> = (0..50)
            .map(|_| {
                let mk = |rng: &mut ChaCha8Rng| BlockVector::from_flat(shape, &uniform(rng, shape.total_dim(), 5.0)).unwrap();
                (mk(&mut rng), mk(&mut rng))
            })
            .collect();
        let steps: Vec<usize> = (0..40).collect();
        violations += audit_condition(&schedule, &s.bundle, &samples, &steps).unwrap().violations.len();
    }
    outcome(
        all_converged && worst_dist <= 1e-5 && violations == 0,
        format!("geometric schedule (0.1, 0.5): max distance to exact-run limit {worst_dist:.1e}, {violations} audit violations"),
    )
}

fn criterion_8(solved: &[Solved]) -> Outcome {
    let (mut worst_form, mut worst_frb) = (0.0f64, 0.0f64);
    for s in solved {
        let shape = s.bundle.shape();
        let wave = |off: f64| BlockVector::from_flat(shape, &(0..shape.total_dim()).map(|k| (off + k as f64).cos()).collect::<Vec<_>>()).unwrap();
        let seeds = Seeds { x_minus1: wave(0.3), x0: wave(1.1) };
        let mut block = init(&s.bundle, None, &s.policy, &seeds).unwrap();
        let mut prod = product_form_init(&s.bundle, None, &s.policy, &seeds).unwrap();
        for _ in 0..100 {
            block = brf_step(&s.bundle, None, &s.policy, &block).unwrap();
            prod = product_form_step(&s.bundle, None, &s.policy, &prod).unwrap();
            worst_form = worst_form.max(block.x().max_abs_diff(&prod.x).unwrap());
        }
        let triple = SingleInclusion::from_bundle(&s.bundle).unwrap();
        let stop = StopRule::new(100, 0.0);
        let frb = frb_run(&triple, s.policy.gamma, &seeds.x_minus1.flatten(), &seeds.x0.flatten(), &stop).unwrap();
        let brf = run(&s.bundle, None, &s.policy, &seeds, &stop).unwrap();
        let d = brf.final_state.x().flatten().iter().zip(&frb.final_state.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_frb = worst_frb.max(d);
    }
    outcome(
        worst_form <= 1e-14 && worst_frb <= 1e-14,
        format!("100 steps: product vs blockwise {worst_form:.1e}, stacked baseline vs blockwise {worst_frb:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let steps = 25;
    let mut bad = Vec::new();
    let mut counted = 0;
    for inst in suite::all() {
        let bundle = inst.bundle().unwrap();
        let mut counters: Vec<(String, CallCounter)> = Vec::new();
        let p = bundle.primal();
        let (b, cb) = p.b.instrumented();
        let (q, cq) = p.q.instrumented();
        counters.push(("B".into(), cb));
        counters.push(("Q".into(), cq));
        let primal = PrimalBlock { a: p.a.clone(), b, q, z: p.z.clone() };
        let duals = bundle
            .duals()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let (b, cb) = d.b.instrumented();
                let (q, cq) = d.q.instrumented();
                let (l, cl, cla) = d.l.instrumented();
                let k = i + 1;
                counters.extend([(format!("B_{k}"), cb), (format!("Q_{k}"), cq), (format!("L_{k}"), cl), (format!("L_{k}*"), cla)]);
                DualBlock { a: d.a.clone(), b, q, l, r: d.r.clone() }
            })
            .collect();
        let counted_bundle = OperatorBundle::new(primal, duals).unwrap();
        let policy = StepPolicy::for_bundle(&counted_bundle, None, 0.01, None).unwrap();
        let mut state = init(&counted_bundle, None, &policy, &Seeds::zeros(&counted_bundle)).unwrap();
        let before: Vec<usize> = counters.iter().map(|(_, c)| c.get()).collect();
        for _ in 0..steps {
            state = brf_step(&counted_bundle, None, &policy, &state).unwrap();
        }
        for ((name, c), b0) in counters.iter().zip(before) {
            counted += 1;
            if c.get() - b0 != steps {
                bad.push(format!("{}:{name}={}", inst.name, c.get() - b0));
            }
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{counted} operators, each evaluated exactly once per step over {steps} steps")
        } else {
            format!("calls over {steps} steps: {}", bad.join(" "))
        },
    )
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_pdbrf");
    let examples = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for name in ["lasso", "mixed", "lasso_perturbed"] {
        let cfg = examples.join(format!("{name}.toml"));
        let mut histories = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}_{rep}"));
            let status = Command::new(bin)
                .args(["--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap(), "--seed", "11"])
                .status()
                .unwrap();
            identical &= status.code() == Some(0);
            histories.push(fs::read(out.join("history.csv")).unwrap_or_default());
        }
        identical &= !histories[0].is_empty() && histories[0] == histories[1];
    }
    let rejected = Command::new(bin)
        .args(["--config", examples.join("lasso.toml").to_str().unwrap(), "--gamma", "10"])
        .args(["--output", dir.path().join("rejected").to_str().unwrap()])
        .output()
        .unwrap();
    let named = String::from_utf8_lossy(&rejected.stderr).contains("1 − γ/(2β) − 2γμ − 7γκ ≥ ε");
    let refused = rejected.status.code() == Some(1);
    outcome(
        identical && named && refused,
        format!("byte-identical histories: {identical}; gamma = 10 rejected: {refused}, inequality named: {named}"),
    )
}

fn main() -> ExitCode {
    let (solved, solve_secs) = solve_suite();
    let results = [
        ("prox correctness", criterion_1()),
        ("resolvent firm nonexpansiveness and adjoints", criterion_2()),
        ("solver and oracle agreement", criterion_3(&solved, solve_secs)),
        ("step-norm summability", criterion_4(&solved)),
        ("strong convergence and limit point", criterion_5()),
        ("residual certificates", criterion_6(&solved)),
        ("inexactness robustness", criterion_7(&solved)),
        ("structural equivalence", criterion_8(&solved)),
        ("one-call accounting", criterion_9()),
        ("CLI determinism and step-size rejection", criterion_10()),
    ];
    let mut failed = 0;
    for (k, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {} {name}: {}", k + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
