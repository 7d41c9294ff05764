//! Structured convex minimization
//!
//! ```text
//! minimize_x  f(x) + Σ_i (g_i □ ℓ_i)(L_i x − r_i) + h(x) − ⟨z, x⟩
//! ```
//!
//! together with its dual
//!
//! ```text
//! minimize_v  (f* □ h*)(z − Σ_i L_i* v_i) + Σ_i (g_i*(v_i) + ℓ_i*(v_i) + ⟨v_i, r_i⟩),
//! ```
//!
//! solved as the inclusion with `A = ∂f`, `B = ∇h`, `A_i = ∂g_i*`,
//! `B_i = ∇ℓ_i*` and `Q = Q_i = 0`. At a saddle point the two optimal
//! values sum to zero.

use nalgebra::DMatrix;

use crate::block::BlockVector;
use crate::brf::{choose_gamma, run, RunOutput, Seeds, StepPolicy, StopRule};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::{
    conjugate_prox, prox_factory, CocoerciveOperator, LinearMap, LipschitzMonotoneOperator, ProxFunction,
};
use crate::product::{DualBlock, OperatorBundle, PrimalBlock};

/// `½ (x − c)ᵀ P (x − c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub p: DMatrix<f64>,
    pub center: Vec<f64>,
}

impl QuadraticForm {
    pub fn value(&self, x: &[f64]) -> f64 {
        let d = linalg::sub(x, &self.center);
        0.5 * linalg::dot(&d, &linalg::matvec(&self.p, &d))
    }

    /// `Some(c)` when `P = c I`.
    fn isotropic(&self) -> Option<f64> {
        let c = self.p[(0, 0)];
        let n = self.p.nrows();
        let iso = (0..n).all(|i| (0..n).all(|j| self.p[(i, j)] == if i == j { c } else { 0.0 }));
        iso.then_some(c)
    }
}

/// The smooth term `h`: its gradient (β_0-cocoercive) and, when known, its
/// closed form.
#[derive(Debug, Clone)]
pub struct SmoothTerm {
    pub gradient: CocoerciveOperator,
    pub quadratic: Option<QuadraticForm>,
}

impl SmoothTerm {
    pub fn zero(dim: usize) -> Self {
        Self {
            gradient: CocoerciveOperator::zero(dim),
            quadratic: Some(QuadraticForm { p: DMatrix::zeros(dim, dim), center: vec![0.0; dim] }),
        }
    }

    /// `h(x) = ½ (x − c)ᵀ P (x − c)` with `P` symmetric positive semidefinite.
    pub fn quadratic(p: DMatrix<f64>, center: Vec<f64>) -> Result<Self> {
        if center.len() != p.nrows() || !p.is_square() {
            return Err(Error::Shape("quadratic center length differs from matrix size".into()));
        }
        let shift = linalg::scale(-1.0, &linalg::matvec(&p, &center));
        let gradient = CocoerciveOperator::affine(p.clone(), shift, None)?;
        Ok(Self { gradient, quadratic: Some(QuadraticForm { p, center }) })
    }

    /// A gradient without a closed form for `h`; objectives are unavailable.
    pub fn from_gradient(gradient: CocoerciveOperator) -> Self {
        Self { gradient, quadratic: None }
    }

    pub fn value(&self, x: &[f64]) -> Option<f64> {
        self.quadratic.as_ref().map(|q| q.value(x))
    }
}

/// The strongly convex `ℓ_i`, given through `∇ℓ_i*`.
#[derive(Debug, Clone)]
pub struct StronglyConvexTerm {
    pub conj_gradient: CocoerciveOperator,
    /// `Some(s)` when `ℓ = ‖·‖²/(2s)`, so that `ℓ* = (s/2)‖·‖²`.
    pub scale: Option<f64>,
}

impl StronglyConvexTerm {
    /// `ℓ = ‖·‖²/(2s)`; `∇ℓ* = s Id` is `1/s`-cocoercive.
    pub fn scaled_sq_norm(dim: usize, s: f64) -> Result<Self> {
        Ok(Self { conj_gradient: CocoerciveOperator::scaled_identity(dim, s, vec![0.0; dim])?, scale: Some(s) })
    }

    pub fn from_conjugate_gradient(conj_gradient: CocoerciveOperator) -> Self {
        Self { conj_gradient, scale: None }
    }

    fn conjugate_value(&self, v: &[f64]) -> Option<f64> {
        self.scale.map(|s| 0.5 * s * linalg::norm_sq(v))
    }
}

#[derive(Debug, Clone)]
pub struct CouplingTerm {
    pub g: ProxFunction,
    pub ell: StronglyConvexTerm,
    pub l: LinearMap,
    pub r: Vec<f64>,
}

impl CouplingTerm {
    /// `(g □ ℓ)(u)`, available when `ℓ = ‖·‖²/(2s)` (a Moreau envelope).
    pub fn infconv_value(&self, u: &[f64]) -> Option<f64> {
        let s = self.ell.scale?;
        let p = self.g.prox(s, u).ok()?;
        Some(self.g.value(&p) + linalg::dist(u, &p).powi(2) / (2.0 * s))
    }

    /// `∇(g □ ℓ)(u) = (u − prox_{sg}(u))/s` for the Moreau-envelope case.
    pub fn infconv_gradient(&self, u: &[f64]) -> Option<Vec<f64>> {
        let s = self.ell.scale?;
        let p = self.g.prox(s, u).ok()?;
        Some(linalg::lincomb(1.0 / s, u, -1.0 / s, &p))
    }
}

#[derive(Debug, Clone)]
pub struct MinProblem {
    pub f: ProxFunction,
    pub h: SmoothTerm,
    pub z: Vec<f64>,
    pub terms: Vec<CouplingTerm>,
}

impl MinProblem {
    pub fn new(f: ProxFunction, h: SmoothTerm, z: Vec<f64>, terms: Vec<CouplingTerm>) -> Result<Self> {
        let p = Self { f, h, z, terms };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.f.validate()?;
        let n = self.f.dim();
        if self.h.gradient.dim() != n || self.z.len() != n {
            return Err(Error::Shape(format!("f acts on R^{n}; h or z does not")));
        }
        if self.terms.is_empty() {
            return Err(Error::Shape("at least one coupling term is required".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            t.g.validate()?;
            let k = t.g.dim();
            if t.l.in_dim() != n || t.l.out_dim() != k || t.r.len() != k || t.ell.conj_gradient.dim() != k {
                return Err(Error::Shape(format!("coupling term {} has inconsistent dimensions", i + 1)));
            }
        }
        Ok(())
    }

    /// Step policy with `μ = sqrt(Σ‖L_i‖²)` and `β′ = min(β_0, β_i)`.
    pub fn policy(&self, epsilon: f64) -> Result<StepPolicy> {
        let bundle = build_inclusion(self)?;
        choose_gamma(bundle.beta_prime(), bundle.lipschitz_mu()?, 0.0, epsilon)
    }
}

/// Problem data of the inclusion attached to `p`.
pub fn build_inclusion(p: &MinProblem) -> Result<OperatorBundle> {
    p.validate()?;
    let n = p.dim();
    let primal = PrimalBlock {
        a: prox_factory(&p.f)?,
        b: p.h.gradient.clone(),
        q: LipschitzMonotoneOperator::zero(n),
        z: p.z.clone(),
    };
    let duals = p
        .terms
        .iter()
        .map(|t| {
            Ok(DualBlock {
                a: conjugate_prox(&prox_factory(&t.g)?),
                b: t.ell.conj_gradient.clone(),
                q: LipschitzMonotoneOperator::zero(t.g.dim()),
                l: t.l.clone(),
                r: t.r.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorBundle::new(primal, duals)
}

#[derive(Debug, Clone)]
pub struct MinSolution {
    pub primal: Vec<f64>,
    pub duals: Vec<Vec<f64>>,
    pub output: RunOutput,
}

/// Runs the primal-dual iteration on [`build_inclusion`]'s bundle:
/// `y_n = prox_{γf}(x_n + γz)`, `w_{i,n} = prox_{γg_i*}(v_{i,n} − γr_i)`,
/// then the reflected forward step with one call of `∇h` and each `∇ℓ_i*`.
pub fn solve_min(p: &MinProblem, policy: &StepPolicy, seeds: &Seeds, stop: &StopRule) -> Result<MinSolution> {
    let bundle = build_inclusion(p)?;
    let output = run(&bundle, None, policy, seeds, stop)?;
    let (primal, duals) = output.solution.clone().into_parts();
    Ok(MinSolution { primal, duals, output })
}

/// `f(x) + Σ(g_i □ ℓ_i)(L_i x − r_i) + h(x) − ⟨z, x⟩`, or `None` when a term
/// has no registered closed form.
pub fn primal_objective(p: &MinProblem, x: &[f64]) -> Option<f64> {
    if x.len() != p.dim() {
        return None;
    }
    let mut total = p.f.value(x) + p.h.value(x)? - linalg::dot(&p.z, x);
    for t in &p.terms {
        let u = linalg::sub(&t.l.apply(x), &t.r);
        total += t.infconv_value(&u)?;
    }
    Some(total)
}

/// `(f* □ h*)(u) = (f + h)*(u)` for the registered cases.
fn conjugate_of_sum(p: &MinProblem, u: &[f64]) -> Option<f64> {
    let q = p.h.quadratic.as_ref()?;
    match q.isotropic() {
        Some(c) if c > 0.0 => {
            // sup_x ⟨u,x⟩ − f(x) − (c/2)‖x − a‖² is attained at prox_{f/c}(a + u/c).
            let arg = linalg::lincomb(1.0, &q.center, 1.0 / c, u);
            let x = p.f.prox(1.0 / c, &arg).ok()?;
            Some(linalg::dot(u, &x) - p.f.value(&x) - q.value(&x))
        }
        Some(_) => p.f.conjugate_value(u),
        None if matches!(p.f, ProxFunction::Zero { .. }) => {
            let chol = q.p.clone().cholesky()?;
            let sol = chol.solve(&nalgebra::DVector::from_column_slice(u));
            Some(linalg::dot(&q.center, u) + 0.5 * linalg::dot(u, sol.as_slice()))
        }
        None => None,
    }
}

/// `(f* □ h*)(z − Σ L_i* v_i) + Σ(g_i*(v_i) + ℓ_i*(v_i) + ⟨v_i, r_i⟩)`, or
/// `None` outside the registered closed forms.
pub fn dual_objective(p: &MinProblem, v: &[Vec<f64>]) -> Option<f64> {
    if v.len() != p.terms.len() || v.iter().zip(&p.terms).any(|(vi, t)| vi.len() != t.g.dim()) {
        return None;
    }
    let mut u = p.z.clone();
    for (vi, t) in v.iter().zip(&p.terms) {
        linalg::axpy(&mut u, -1.0, &t.l.adjoint(vi));
    }
    let mut total = conjugate_of_sum(p, &u)?;
    for (vi, t) in v.iter().zip(&p.terms) {
        total += t.g.conjugate_value(vi)? + t.ell.conjugate_value(vi)? + linalg::dot(vi, &t.r);
    }
    Some(total)
}

/// Primal-dual pair as a block vector, for residual checks.
pub fn as_block(x: &[f64], v: &[Vec<f64>]) -> Result<BlockVector> {
    BlockVector::new(x.to_vec(), v.to_vec())
}
