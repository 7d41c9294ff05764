//! Operator abstractions.
//!
//! Set-valued maximally monotone operators are only ever touched through
//! their resolvents, so [`ResolventOperator`] stores nothing but the map
//! `(γ, x) ↦ J_{γA} x`. Single-valued operators carry their declared
//! constant (cocoercivity `β` or Lipschitz `μ`); declared constants are
//! trusted and can be audited by sampling with [`check_cocoercive`] and
//! [`check_lipschitz_monotone`].

mod linear;
mod prox;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

pub use linear::{estimate_operator_norm, LinearMap, NormEstimate, NORM_SAFETY_FACTOR};
pub use prox::{conjugate_prox, prox_factory, ProxFunction, FEASIBILITY_TOL};

/// A single-valued map on a coordinate space.
pub trait VectorMap: Send + Sync {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

impl<F> VectorMap for F
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self(x)
    }
}

type ResolventFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// Shared evaluation counter attached to an instrumented operator.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    pub(crate) fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Resolvent `J_{γA} = (Id + γA)^{-1}` of a maximally monotone operator.
#[derive(Clone)]
pub struct ResolventOperator {
    dim: usize,
    map: Arc<ResolventFn>,
}

impl fmt::Debug for ResolventOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResolventOperator").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl ResolventOperator {
    /// Wraps a resolvent map. The map must be firmly nonexpansive for every
    /// `γ > 0`; this is not verified here.
    pub fn new<F>(dim: usize, map: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { dim, map: Arc::new(map) }
    }

    /// Resolvent of the zero operator, i.e. the identity.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_, x| x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolvent(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("resolvent index must be > 0, got {gamma}")));
        }
        if x.len() != self.dim {
            return Err(Error::Shape(format!("resolvent expects dim {}, got {}", self.dim, x.len())));
        }
        Ok((self.map)(gamma, x))
    }

    /// Evaluation without argument checks, for hot loops that validated once.
    pub(crate) fn eval(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        (self.map)(gamma, x)
    }
}

/// A `β`-cocoercive operator: `⟨x−y, Bx−By⟩ ≥ β‖Bx−By‖²`.
///
/// `β = +∞` is accepted and denotes a constant map (in practice the zero
/// operator), which contributes nothing to step-size bounds.
#[derive(Clone)]
pub struct CocoerciveOperator {
    dim: usize,
    beta: f64,
    map: Arc<dyn VectorMap>,
}

impl fmt::Debug for CocoerciveOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CocoerciveOperator")
            .field("dim", &self.dim)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl CocoerciveOperator {
    pub fn new<M: VectorMap + 'static>(dim: usize, beta: f64, map: M) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("cocoercivity constant must be > 0, got {beta}")));
        }
        Ok(Self { dim, beta, map: Arc::new(map) })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, beta: f64::INFINITY, map: Arc::new(move |_: &[f64]| vec![0.0; dim]) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, beta: 1.0, map: Arc::new(|x: &[f64]| x.to_vec()) }
    }

    /// `x ↦ s (x − c)`, which is `1/s`-cocoercive.
    pub fn scaled_identity(dim: usize, s: f64, center: Vec<f64>) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!("scale must be positive and finite, got {s}")));
        }
        if center.len() != dim {
            return Err(Error::Shape("center length differs from dim".into()));
        }
        Self::new(dim, 1.0 / s, move |x: &[f64]| {
            x.iter().zip(&center).map(|(a, c)| s * (a - c)).collect()
        })
    }

    /// `x ↦ P x + b` with `P` symmetric positive semidefinite, i.e. the
    /// gradient of `½⟨x, Px⟩ + ⟨b, x⟩`. The constant is `1/λ_max(P)` unless
    /// `beta` is given explicitly (declared constants are trusted).
    pub fn affine(p: DMatrix<f64>, b: Vec<f64>, beta: Option<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&p, 1e-12) {
            return Err(Error::InvalidParameter("cocoercive affine map needs a symmetric matrix".into()));
        }
        let ev = linalg::symmetric_eigenvalues(&p);
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo < -1e-12 * hi.abs().max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lo });
        }
        if b.len() != p.nrows() {
            return Err(Error::Shape("offset length differs from matrix size".into()));
        }
        let beta = match beta {
            Some(beta) => beta,
            None if hi <= 0.0 => f64::INFINITY,
            None => 1.0 / hi,
        };
        let dim = p.nrows();
        Self::new(dim, beta, move |x: &[f64]| linalg::add(&linalg::matvec(&p, x), &b))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.map.apply(x)
    }

    /// Same operator, with a counter incremented on every evaluation.
    pub fn instrumented(&self) -> (Self, CallCounter) {
        let counter = CallCounter::default();
        let c = counter.clone();
        let inner = self.map.clone();
        let op = Self {
            dim: self.dim,
            beta: self.beta,
            map: Arc::new(move |x: &[f64]| {
                c.bump();
                inner.apply(x)
            }),
        };
        (op, counter)
    }
}

/// A monotone, `μ`-Lipschitz single-valued operator.
#[derive(Clone)]
pub struct LipschitzMonotoneOperator {
    dim: usize,
    mu: f64,
    map: Arc<dyn VectorMap>,
}

impl fmt::Debug for LipschitzMonotoneOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzMonotoneOperator")
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .finish_non_exhaustive()
    }
}

impl LipschitzMonotoneOperator {
    pub fn new<M: VectorMap + 'static>(dim: usize, mu: f64, map: M) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be finite and >= 0, got {mu}")));
        }
        Ok(Self { dim, mu, map: Arc::new(map) })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, mu: 0.0, map: Arc::new(move |_: &[f64]| vec![0.0; dim]) }
    }

    /// `x ↦ M x` with `M + Mᵀ` positive semidefinite; `μ = ‖M‖₂`.
    pub fn linear(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape("monotone linear map needs a square matrix".into()));
        }
        let lo = linalg::symmetric_eigenvalues(&m)[0];
        if lo < -1e-12 * m.amax().max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lo });
        }
        let mu = linalg::spectral_norm(&m);
        let dim = m.nrows();
        Self::new(dim, mu, move |x: &[f64]| linalg::matvec(&m, x))
    }

    /// Planar rotation by `angle` scaled by `scale`; monotone when
    /// `cos(angle) ≥ 0`.
    pub fn rotation(angle: f64, scale: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::linear(DMatrix::from_row_slice(2, 2, &[scale * c, -scale * s, scale * s, scale * c]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.map.apply(x)
    }

    pub fn instrumented(&self) -> (Self, CallCounter) {
        let counter = CallCounter::default();
        let c = counter.clone();
        let inner = self.map.clone();
        let op = Self {
            dim: self.dim,
            mu: self.mu,
            map: Arc::new(move |x: &[f64]| {
                c.bump();
                inner.apply(x)
            }),
        };
        (op, counter)
    }
}

/// Worst-case slacks of the defining inequalities over a set of sampled
/// pairs. A negative slack is a violation; `worst_pair` indexes the pair
/// realizing the smallest slack among the checked inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub pairs: usize,
    /// `min ⟨x−y, Tx−Ty⟩`
    pub monotone_slack: f64,
    /// `min ⟨x−y, Bx−By⟩ − β‖Bx−By‖²`, cocoercive operators only.
    pub cocoercive_slack: Option<f64>,
    /// `min μ‖x−y‖ − ‖Qx−Qy‖`, Lipschitz operators only.
    pub lipschitz_slack: Option<f64>,
    pub worst_pair: Option<usize>,
}

impl SampleReport {
    pub fn worst_slack(&self) -> f64 {
        [Some(self.monotone_slack), self.cocoercive_slack, self.lipschitz_slack]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_satisfied(&self, tol: f64) -> bool {
        self.worst_slack() >= -tol
    }
}

/// Operators that can be audited by [`sample_monotonicity_check`].
pub enum SampledOperator<'a> {
    Cocoercive(&'a CocoerciveOperator),
    LipschitzMonotone(&'a LipschitzMonotoneOperator),
}

pub fn sample_monotonicity_check(op: SampledOperator<'_>, pairs: &[(Vec<f64>, Vec<f64>)]) -> SampleReport {
    match op {
        SampledOperator::Cocoercive(b) => check_cocoercive(b, pairs),
        SampledOperator::LipschitzMonotone(q) => check_lipschitz_monotone(q, pairs),
    }
}

fn cocoercive_slack(beta: f64, inner: f64, diff_sq: f64) -> f64 {
    if beta.is_infinite() {
        if diff_sq == 0.0 {
            inner
        } else {
            f64::NEG_INFINITY
        }
    } else {
        inner - beta * diff_sq
    }
}

pub fn check_cocoercive(op: &CocoerciveOperator, pairs: &[(Vec<f64>, Vec<f64>)]) -> SampleReport {
    let mut mono = f64::INFINITY;
    let mut coco = f64::INFINITY;
    let mut worst = None;
    let mut worst_val = f64::INFINITY;
    for (k, (x, y)) in pairs.iter().enumerate() {
        let d = linalg::sub(x, y);
        let td = linalg::sub(&op.apply(x), &op.apply(y));
        let inner = linalg::dot(&d, &td);
        let c = cocoercive_slack(op.beta, inner, linalg::norm_sq(&td));
        mono = mono.min(inner);
        coco = coco.min(c);
        if inner.min(c) < worst_val {
            worst_val = inner.min(c);
            worst = Some(k);
        }
    }
    SampleReport {
        pairs: pairs.len(),
        monotone_slack: mono,
        cocoercive_slack: Some(coco),
        lipschitz_slack: None,
        worst_pair: worst,
    }
}

pub fn check_lipschitz_monotone(op: &LipschitzMonotoneOperator, pairs: &[(Vec<f64>, Vec<f64>)]) -> SampleReport {
    let mut mono = f64::INFINITY;
    let mut lip = f64::INFINITY;
    let mut worst = None;
    let mut worst_val = f64::INFINITY;
    for (k, (x, y)) in pairs.iter().enumerate() {
        let d = linalg::sub(x, y);
        let td = linalg::sub(&op.apply(x), &op.apply(y));
        let inner = linalg::dot(&d, &td);
        let l = op.mu * linalg::norm(&d) - linalg::norm(&td);
        mono = mono.min(inner);
        lip = lip.min(l);
        if inner.min(l) < worst_val {
            worst_val = inner.min(l);
            worst = Some(k);
        }
    }
    SampleReport {
        pairs: pairs.len(),
        monotone_slack: mono,
        cocoercive_slack: None,
        lipschitz_slack: Some(lip),
        worst_pair: worst,
    }
}

/// Smallest slack of `⟨x−y, Jx−Jy⟩ − ‖Jx−Jy‖²` over the pairs.
pub fn check_firmly_nonexpansive<F>(resolvent: F, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    pairs
        .iter()
        .map(|(x, y)| {
            let d = linalg::sub(x, y);
            let jd = linalg::sub(&resolvent(x), &resolvent(y));
            linalg::dot(&d, &jd) - linalg::norm_sq(&jd)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_2d() -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![
            (vec![1.0, 0.0], vec![0.0, 0.0]),
            (vec![0.3, -2.0], vec![1.5, 0.25]),
            (vec![-4.0, 1.0], vec![2.0, 3.0]),
        ]
    }

    #[test]
    fn identity_is_one_cocoercive() {
        let r = check_cocoercive(&CocoerciveOperator::identity(2), &pairs_2d());
        assert!(r.monotone_slack > 0.0);
        assert!(r.cocoercive_slack.unwrap() >= 0.0);
        assert!(r.is_satisfied(0.0));
    }

    #[test]
    fn rotation_is_skew_isometry() {
        let q = LipschitzMonotoneOperator::new(2, 1.0, |x: &[f64]| vec![-x[1], x[0]]).unwrap();
        let r = sample_monotonicity_check(SampledOperator::LipschitzMonotone(&q), &pairs_2d());
        assert_eq!(r.monotone_slack, 0.0);
        assert_eq!(r.lipschitz_slack, Some(0.0));
    }

    #[test]
    fn misdeclared_scaling_is_reported() {
        let b = CocoerciveOperator::new(2, 1.0, |x: &[f64]| linalg::scale(2.0, x)).unwrap();
        let r = sample_monotonicity_check(SampledOperator::Cocoercive(&b), &pairs_2d());
        assert!(r.cocoercive_slack.unwrap() < 0.0);
        assert!(!r.is_satisfied(1e-12));
        assert!(r.worst_pair.is_some());
    }

    #[test]
    fn affine_constant_from_spectrum() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = CocoerciveOperator::affine(p, vec![1.0, -1.0], None).unwrap();
        assert_eq!(b.beta(), 0.5);
        assert_eq!(b.apply(&[1.0, 2.0]), vec![3.0, 0.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            CocoerciveOperator::affine(bad, vec![0.0; 2], None),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn zero_operator_has_infinite_beta() {
        let b = CocoerciveOperator::zero(3);
        assert!(b.beta().is_infinite());
        assert!(check_cocoercive(&b, &[(vec![1.0; 3], vec![0.0; 3])]).is_satisfied(0.0));
    }

    #[test]
    fn rotation_mu_and_monotonicity() {
        let q = LipschitzMonotoneOperator::rotation(std::f64::consts::FRAC_PI_2, 2.0).unwrap();
        assert!((q.mu() - 2.0).abs() < 1e-12);
        assert!(LipschitzMonotoneOperator::rotation(std::f64::consts::PI, 1.0).is_err());
    }

    #[test]
    fn counters_count() {
        let (b, c) = CocoerciveOperator::identity(1).instrumented();
        b.apply(&[1.0]);
        b.apply(&[2.0]);
        assert_eq!(c.get(), 2);
        let (q, cq) = LipschitzMonotoneOperator::zero(1).instrumented();
        q.apply(&[0.0]);
        assert_eq!(cq.get(), 1);
    }

    #[test]
    fn resolvent_rejects_bad_gamma() {
        let r = ResolventOperator::zero(2);
        assert!(r.resolvent(0.0, &[1.0, 2.0]).is_err());
        assert!(r.resolvent(-1.0, &[1.0, 2.0]).is_err());
        assert!(r.resolvent(1.0, &[1.0]).is_err());
        assert_eq!(r.resolvent(3.0, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }
}
