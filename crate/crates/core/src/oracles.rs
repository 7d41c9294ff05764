//! Reference solvers that share no code path with the splitting iteration.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockVector, SpaceShape};
use crate::convex::{primal_objective, MinProblem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::ProxFunction;
use crate::product::OperatorBundle;
use crate::registry::BundleSpec;

/// Default resolvent index of [`kkt_residual`].
pub const KKT_GAMMA_PROBE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Grid,
    Subgradient,
    ClosedForm,
    LinearSolve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub point: Vec<f64>,
    /// Nonnegative residual or optimality-gap estimate.
    pub certificate: f64,
    pub method: OracleMethod,
    pub objective: Option<f64>,
}

impl OracleSolution {
    /// `objective − best_known`, when the objective is known.
    pub fn gap_to(&self, best_known: f64) -> Option<f64> {
        self.objective.map(|v| (v - best_known).max(0.0))
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimizer of a strictly unimodal function
/// on `[a, b]`, comparing values through `diff(s, t) = F(s) − F(t)`.
fn golden(diff: &dyn Fn(f64, f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    while b - a > tol {
        if diff(c, d) < 0.0 {
            b = d;
            d = c;
            c = b - INV_PHI * (b - a);
        } else {
            a = c;
            c = d;
            d = a + INV_PHI * (b - a);
        }
    }
    0.5 * (a + b)
}

/// Coordinatewise search for `argmin_y f(y) + ‖x − y‖²/(2γ)`, accurate to
/// about `resolution`. Uses only pointwise values of `f`.
pub fn grid_prox_oracle(f: &ProxFunction, gamma: f64, x: &[f64], resolution: f64) -> Result<Vec<f64>> {
    if !f.is_coordinate_separable() {
        return Err(Error::NonSeparable(format!("{f:?}")));
    }
    if !(gamma > 0.0) || !(resolution > 0.0) {
        return Err(Error::InvalidParameter("gamma and resolution must be > 0".into()));
    }
    if x.len() != f.dim() {
        return Err(Error::Shape(format!("input has length {}, function acts on R^{}", x.len(), f.dim())));
    }
    let mut out = Vec::with_capacity(x.len());
    for (j, &xj) in x.iter().enumerate() {
        let (lo, hi) = f.coordinate_domain(j);
        if lo == hi {
            out.push(lo);
            continue;
        }
        // F(s) − F(t), with the quadratic part in factored form.
        let diff = |s: f64, t: f64| {
            let phi = f.coordinate_value(j, s).unwrap_or(f64::INFINITY)
                - f.coordinate_value(j, t).unwrap_or(f64::INFINITY);
            phi + (s - t) * (s + t - 2.0 * xj) / (2.0 * gamma)
        };
        let center = xj.clamp(lo, hi);
        let mut width = 10.0 * gamma * (1.0 + xj.abs());
        loop {
            let a = (center - width).max(lo);
            let b = (center + width).min(hi);
            let mut t = golden(&diff, a, b, 0.25 * resolution);
            for edge in [a, b] {
                if (t - edge).abs() < resolution && diff(edge, t) <= 0.0 {
                    t = edge;
                }
            }
            let at_open_edge = (t - a < resolution && a > lo) || (b - t < resolution && b < hi);
            if !at_open_edge {
                out.push(t);
                break;
            }
            width *= 2.0;
            if !width.is_finite() {
                return Err(Error::Oracle("prox objective is unbounded below".into()));
            }
        }
    }
    Ok(out)
}

/// `max(res_P, max_i res_i)` with
///
/// ```text
/// res_P = ‖ȳ − J_{γA}(ȳ + γ(z − Bȳ − Qȳ − Σ L_i* v̄_i))‖
/// res_i = ‖v̄_i − J_{γA_i}(v̄_i + γ(L_i ȳ − r_i − B_i v̄_i − Q_i v̄_i))‖
/// ```
///
/// which vanishes exactly at primal-dual solutions.
pub fn kkt_residual(bundle: &OperatorBundle, candidate: &BlockVector, gamma_probe: f64) -> Result<f64> {
    if !(gamma_probe > 0.0) || !gamma_probe.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma_probe must be > 0, got {gamma_probe}")));
    }
    bundle.check_shape(candidate)?;
    let g = gamma_probe;
    let p = bundle.primal();
    let y = candidate.primal();
    let mut force = linalg::sub(&p.z, &linalg::add(&p.b.apply(y), &p.q.apply(y)));
    for (i, d) in bundle.duals().iter().enumerate() {
        linalg::axpy(&mut force, -1.0, &d.l.adjoint(candidate.dual(i)));
    }
    let mut worst = linalg::dist(y, &p.a.resolvent(g, &linalg::lincomb(1.0, y, g, &force))?);
    for (i, d) in bundle.duals().iter().enumerate() {
        let v = candidate.dual(i);
        let mut force = linalg::sub(&d.l.apply(y), &d.r);
        linalg::axpy(&mut force, -1.0, &d.b.apply(v));
        linalg::axpy(&mut force, -1.0, &d.q.apply(v));
        worst = worst.max(linalg::dist(v, &d.a.resolvent(g, &linalg::lincomb(1.0, v, g, &force))?));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `α_k = scale / sqrt(k + 1)`.
    InverseSqrt { scale: f64 },
    /// `α_k = scale / (k + 1)`; suited to strongly convex objectives.
    Harmonic { scale: f64 },
}

impl StepRule {
    fn step(&self, k: usize) -> f64 {
        match *self {
            Self::InverseSqrt { scale } => scale / ((k + 1) as f64).sqrt(),
            Self::Harmonic { scale } => scale / (k + 1) as f64,
        }
    }
}

/// Projected subgradient descent on the primal objective from a seeded
/// random start. The certificate is the decrease of the best value over the
/// last 10% of iterations.
pub fn subgradient_oracle(p: &MinProblem, iters: usize, step_rule: StepRule, seed: u64) -> Result<OracleSolution> {
    p.validate()?;
    let n = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut x = p.f.project_domain(&start);
    let objective = |x: &[f64]| {
        primal_objective(p, x).ok_or_else(|| Error::Unavailable("primal objective has no closed form".into()))
    };

    let mut best_x = x.clone();
    let mut best = objective(&x)?;
    let mut best_at_tail = best;
    let tail_start = iters - iters / 10;
    for k in 0..iters {
        if k == tail_start {
            best_at_tail = best;
        }
        let mut g = p.f.subgradient(&x);
        linalg::axpy(&mut g, 1.0, &p.h.gradient.apply(&x));
        linalg::axpy(&mut g, -1.0, &p.z);
        for t in &p.terms {
            let u = linalg::sub(&t.l.apply(&x), &t.r);
            let grad = t.infconv_gradient(&u).ok_or_else(|| Error::Unavailable("envelope gradient".into()))?;
            linalg::axpy(&mut g, 1.0, &t.l.adjoint(&grad));
        }
        linalg::axpy(&mut x, -step_rule.step(k), &g);
        x = p.f.project_domain(&x);
        let value = objective(&x)?;
        if value < best {
            best = value;
            best_x.clone_from(&x);
        }
    }
    let certificate = if iters == 0 { 0.0 } else { (best_at_tail - best).max(0.0) };
    Ok(OracleSolution { point: best_x, certificate, method: OracleMethod::Subgradient, objective: Some(best) })
}

/// A one-dimensional maximal monotone operator with piecewise constant values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordinateLaw {
    /// The zero operator.
    Free,
    /// Normal cone of `{value}`.
    Fixed(f64),
    /// Normal cone of `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// `∂ max(lo·t, hi·t)` with `lo ≤ hi`.
    Kink { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    /// Row reads `(Mu + c)_j + s = 0`; the coordinate must lie in `[lo, hi]`.
    Slope { s: f64, lo: f64, hi: f64 },
    /// `u_j = value`; the multiplier `−(Mu + c)_j` must lie in `[lo, hi]`.
    Pinned { value: f64, lo: f64, hi: f64 },
}

impl CoordinateLaw {
    fn pieces(&self) -> Vec<Piece> {
        let inf = f64::INFINITY;
        match *self {
            Self::Free => vec![Piece::Slope { s: 0.0, lo: -inf, hi: inf }],
            Self::Fixed(v) => vec![Piece::Pinned { value: v, lo: -inf, hi: inf }],
            Self::Interval { lo, hi } => {
                let mut p = vec![Piece::Slope { s: 0.0, lo, hi }];
                if lo.is_finite() {
                    p.push(Piece::Pinned { value: lo, lo: -inf, hi: 0.0 });
                }
                if hi.is_finite() && hi != lo {
                    p.push(Piece::Pinned { value: hi, lo: 0.0, hi: inf });
                }
                p
            }
            Self::Kink { lo, hi } => vec![
                Piece::Slope { s: hi, lo: 0.0, hi: inf },
                Piece::Slope { s: lo, lo: -inf, hi: 0.0 },
                Piece::Pinned { value: 0.0, lo, hi },
            ],
        }
    }
}

/// `0 ∈ T(u) + M u + c` with `T = T_1 × … × T_N` given by coordinate laws.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineInclusion {
    pub m: DMatrix<f64>,
    pub c: Vec<f64>,
    pub laws: Vec<CoordinateLaw>,
}

struct Assembly {
    m: DMatrix<f64>,
    c: Vec<f64>,
    laws: Vec<CoordinateLaw>,
}

impl Assembly {
    fn add_matrix(&mut self, row: usize, col: usize, block: &DMatrix<f64>, sign: f64) {
        for i in 0..block.nrows() {
            for j in 0..block.ncols() {
                self.m[(row + i, col + j)] += sign * block[(i, j)];
            }
        }
    }

    fn add_vector(&mut self, off: usize, v: &[f64], sign: f64) {
        for (k, t) in v.iter().enumerate() {
            self.c[off + k] += sign * t;
        }
    }

    /// Records `∂f` (or `∂f*`) on coordinates `off..off + f.dim()`.
    fn add_subdifferential(&mut self, f: &ProxFunction, off: usize, conjugate: bool) -> Result<()> {
        let unavailable = || Error::Unavailable(format!("no piecewise-affine form for {f:?}"));
        let n = f.dim();
        let mut set = |laws: Vec<CoordinateLaw>| self.laws[off..off + n].copy_from_slice(&laws);
        match (f, conjugate) {
            (ProxFunction::Zero { .. }, false) => set(vec![CoordinateLaw::Free; n]),
            (ProxFunction::Zero { .. }, true) => set(vec![CoordinateLaw::Fixed(0.0); n]),
            (ProxFunction::L1 { weight, .. }, false) => set(vec![CoordinateLaw::Kink { lo: -weight, hi: *weight }; n]),
            (ProxFunction::L1 { weight, .. }, true) => {
                set(vec![CoordinateLaw::Interval { lo: -weight, hi: *weight }; n])
            }
            (ProxFunction::Box { lower, upper }, false) => {
                set(lower.iter().zip(upper).map(|(&lo, &hi)| CoordinateLaw::Interval { lo, hi }).collect())
            }
            (ProxFunction::Box { lower, upper }, true) => {
                if lower.iter().chain(upper).any(|t| !t.is_finite()) {
                    return Err(unavailable());
                }
                set(lower.iter().zip(upper).map(|(&lo, &hi)| CoordinateLaw::Kink { lo, hi }).collect())
            }
            (ProxFunction::L2Ball { center, radius }, conj) if center.len() == 1 => {
                let (lo, hi) = (center[0] - radius, center[0] + radius);
                set(vec![if conj { CoordinateLaw::Kink { lo, hi } } else { CoordinateLaw::Interval { lo, hi } }])
            }
            (ProxFunction::L2Ball { .. }, _) => return Err(unavailable()),
            (ProxFunction::SqDist { point, weight }, false) => {
                set(vec![CoordinateLaw::Free; n]);
                for (k, a) in point.iter().enumerate() {
                    self.m[(off + k, off + k)] += weight;
                    self.c[off + k] -= weight * a;
                }
            }
            (ProxFunction::SqDist { point, weight }, true) => {
                if *weight == 0.0 {
                    set(vec![CoordinateLaw::Fixed(0.0); n]);
                } else {
                    set(vec![CoordinateLaw::Free; n]);
                    for (k, a) in point.iter().enumerate() {
                        self.m[(off + k, off + k)] += 1.0 / weight;
                        self.c[off + k] += a;
                    }
                }
            }
            (ProxFunction::Quadratic { p, b }, conj) => {
                set(vec![CoordinateLaw::Free; n]);
                let pm = linalg::matrix_from_rows(p)?;
                if conj {
                    let inv = pm.cholesky().ok_or_else(unavailable)?.inverse();
                    let shift = linalg::matvec(&inv, b);
                    self.add_matrix(off, off, &inv, 1.0);
                    self.add_vector(off, &shift, -1.0);
                } else {
                    self.add_matrix(off, off, &pm, 1.0);
                    self.add_vector(off, b, 1.0);
                }
            }
            (ProxFunction::Separable { parts }, conj) => {
                let mut o = off;
                for part in parts {
                    self.add_subdifferential(part, o, conj)?;
                    o += part.dim();
                }
            }
        }
        Ok(())
    }
}

impl PiecewiseAffineInclusion {
    pub fn new(m: DMatrix<f64>, c: Vec<f64>, laws: Vec<CoordinateLaw>) -> Result<Self> {
        if !m.is_square() || m.nrows() != c.len() || c.len() != laws.len() {
            return Err(Error::Shape("M, c and laws must share one dimension".into()));
        }
        Ok(Self { m, c, laws })
    }

    /// The primal-dual inclusion of a spec on the flattened product space,
    /// when every block is piecewise affine.
    pub fn from_bundle_spec(spec: &BundleSpec) -> Result<(Self, SpaceShape)> {
        let n = spec.primal.a.dim();
        let dims: Vec<usize> = spec.duals.iter().map(|d| d.a.dim()).collect();
        let shape = SpaceShape::new(n, dims.clone())?;
        let total = shape.total_dim();
        let mut asm = Assembly { m: DMatrix::zeros(total, total), c: vec![0.0; total], laws: vec![CoordinateLaw::Free; total] };

        asm.add_subdifferential(&spec.primal.a, 0, false)?;
        if let Some(b) = &spec.primal.b {
            let (bm, bc) = b.affine_parts()?;
            asm.add_matrix(0, 0, &bm, 1.0);
            asm.add_vector(0, &bc, 1.0);
        }
        if let Some(q) = &spec.primal.q {
            asm.add_matrix(0, 0, &q.matrix()?, 1.0);
        }
        if let Some(z) = &spec.primal.z {
            asm.add_vector(0, z, -1.0);
        }
        let mut off = n;
        for (d, &k) in spec.duals.iter().zip(&dims) {
            asm.add_subdifferential(&d.a, off, d.conjugate)?;
            if let Some(b) = &d.b {
                let (bm, bc) = b.affine_parts()?;
                asm.add_matrix(off, off, &bm, 1.0);
                asm.add_vector(off, &bc, 1.0);
            }
            if let Some(q) = &d.q {
                asm.add_matrix(off, off, &q.matrix()?, 1.0);
            }
            let l = d.l.matrix()?;
            if l.nrows() != k || l.ncols() != n {
                return Err(Error::Shape("coupling matrix does not match block dimensions".into()));
            }
            asm.add_matrix(0, off, &l.transpose(), 1.0);
            asm.add_matrix(off, 0, &l, -1.0);
            if let Some(r) = &d.r {
                asm.add_vector(off, r, 1.0);
            }
            off += k;
        }
        Ok((Self { m: asm.m, c: asm.c, laws: asm.laws }, shape))
    }

    /// Enumerates the pieces of every coordinate, solves the linear system of
    /// each combination and returns the first feasible solution.
    pub fn solve(&self, max_combinations: usize) -> Result<OracleSolution> {
        let pieces: Vec<Vec<Piece>> = self.laws.iter().map(CoordinateLaw::pieces).collect();
        let count = pieces.iter().try_fold(1usize, |acc, p| acc.checked_mul(p.len()));
        match count {
            Some(c) if c <= max_combinations => {}
            _ => return Err(Error::Oracle(format!("too many active-set combinations (limit {max_combinations})"))),
        }
        let dim = self.c.len();
        let scale = 1.0 + self.m.amax() + self.c.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        let tol = 1e-9 * scale;
        let mut index = vec![0usize; dim];
        loop {
            let mut a = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for j in 0..dim {
                match pieces[j][index[j]] {
                    Piece::Slope { s, .. } => {
                        a.set_row(j, &self.m.row(j));
                        rhs[j] = -self.c[j] - s;
                    }
                    Piece::Pinned { value, .. } => {
                        a[(j, j)] = 1.0;
                        rhs[j] = value;
                    }
                }
            }
            if let Some(u) = a.lu().solve(&rhs) {
                let mu = &self.m * &u;
                let mut violation = 0.0f64;
                for j in 0..dim {
                    let (t, lo, hi) = match pieces[j][index[j]] {
                        Piece::Slope { lo, hi, .. } => (u[j], lo, hi),
                        Piece::Pinned { lo, hi, .. } => (-(mu[j] + self.c[j]), lo, hi),
                    };
                    violation = violation.max(lo - t).max(t - hi);
                }
                if u.iter().all(|t| t.is_finite()) && violation <= tol {
                    return Ok(OracleSolution {
                        point: u.as_slice().to_vec(),
                        certificate: violation.max(0.0),
                        method: OracleMethod::LinearSolve,
                        objective: None,
                    });
                }
            }
            let mut k = 0;
            loop {
                if k == dim {
                    return Err(Error::Oracle("no feasible active set".into()));
                }
                index[k] += 1;
                if index[k] < pieces[k].len() {
                    break;
                }
                index[k] = 0;
                k += 1;
            }
        }
    }
}

/// Solves a spec through [`PiecewiseAffineInclusion`] and returns the
/// solution as a block vector.
pub fn active_set_oracle(spec: &BundleSpec, max_combinations: usize) -> Result<(BlockVector, OracleSolution)> {
    let (inclusion, shape) = PiecewiseAffineInclusion::from_bundle_spec(spec)?;
    let sol = inclusion.solve(max_combinations)?;
    Ok((BlockVector::from_flat(&shape, &sol.point)?, sol))
}
