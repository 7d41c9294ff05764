//! Problem data and the operators it induces on `K = H ⊕ G_1 ⊕ … ⊕ G_m`:
//!
//! ```text
//! A(x, v) = (−z + A x, r_1 + A_1 v_1, …, r_m + A_m v_m)
//! S(x, v) = (Q x + Σ_i L_i* v_i, Q_1 v_1 − L_1 x, …, Q_m v_m − L_m x)
//! B(x, v) = (B x, B_1 v_1, …, B_m v_m)
//! ```
//!
//! The shifts `z`, `r_i` live in the resolvent of the bold `A` rather than
//! in an operator object.

use crate::block::{BlockVector, SpaceShape};
use crate::error::{Error, Result};
use crate::inexact::PerturbedBundleAtN;
use crate::linalg;
use crate::operators::{CocoerciveOperator, LinearMap, LipschitzMonotoneOperator, ResolventOperator};

/// Operators acting on the primal space `H`.
#[derive(Debug, Clone)]
pub struct PrimalBlock {
    pub a: ResolventOperator,
    pub b: CocoerciveOperator,
    pub q: LipschitzMonotoneOperator,
    pub z: Vec<f64>,
}

/// Operators attached to one dual space `G_i`, and the coupling `L_i: H → G_i`.
#[derive(Debug, Clone)]
pub struct DualBlock {
    pub a: ResolventOperator,
    pub b: CocoerciveOperator,
    pub q: LipschitzMonotoneOperator,
    pub l: LinearMap,
    pub r: Vec<f64>,
}

/// Validated problem data.
#[derive(Debug, Clone)]
pub struct OperatorBundle {
    primal: PrimalBlock,
    duals: Vec<DualBlock>,
    shape: SpaceShape,
}

impl OperatorBundle {
    pub fn new(primal: PrimalBlock, duals: Vec<DualBlock>) -> Result<Self> {
        let n = primal.z.len();
        if primal.a.dim() != n || primal.b.dim() != n || primal.q.dim() != n {
            return Err(Error::Shape(format!(
                "primal block dims disagree: z {}, A {}, B {}, Q {}",
                n,
                primal.a.dim(),
                primal.b.dim(),
                primal.q.dim()
            )));
        }
        if !linalg::all_finite(&primal.z) {
            return Err(Error::NonFinite("z".into()));
        }
        for (i, d) in duals.iter().enumerate() {
            let g = d.r.len();
            if d.a.dim() != g || d.b.dim() != g || d.q.dim() != g || d.l.out_dim() != g || d.l.in_dim() != n {
                return Err(Error::Shape(format!(
                    "dual block {}: r {}, A {}, B {}, Q {}, L {}x{} (primal dim {})",
                    i + 1,
                    g,
                    d.a.dim(),
                    d.b.dim(),
                    d.q.dim(),
                    d.l.out_dim(),
                    d.l.in_dim(),
                    n
                )));
            }
            if !linalg::all_finite(&d.r) {
                return Err(Error::NonFinite(format!("r_{}", i + 1)));
            }
        }
        let shape = SpaceShape::new(n, duals.iter().map(|d| d.r.len()).collect())?;
        if duals.iter().all(|d| d.l.is_zero_map()) {
            return Err(Error::ZeroCoupling);
        }
        Ok(Self { primal, duals, shape })
    }

    pub fn shape(&self) -> &SpaceShape {
        &self.shape
    }

    pub fn m(&self) -> usize {
        self.duals.len()
    }

    pub fn primal(&self) -> &PrimalBlock {
        &self.primal
    }

    /// Dual block `i` in `0..m`.
    pub fn dual(&self, i: usize) -> &DualBlock {
        &self.duals[i]
    }

    pub fn duals(&self) -> &[DualBlock] {
        &self.duals
    }

    /// Fills missing `‖L_i‖` bounds by seeded power iteration (inflated by
    /// the safety factor). Block `i` uses seed `seed + i`.
    pub fn with_estimated_norms(mut self, seed: u64) -> Self {
        for (i, d) in self.duals.iter_mut().enumerate() {
            d.l = d.l.clone().with_estimated_norm(seed.wrapping_add(i as u64));
        }
        self
    }

    /// Cocoercivity constant of the bold `B`: `min_{0≤i≤m} β_i`.
    pub fn beta_prime(&self) -> f64 {
        self.duals.iter().map(|d| d.b.beta()).fold(self.primal.b.beta(), f64::min)
    }

    /// `sqrt(Σ_i ‖L_i‖²) + max_{0≤i≤m} μ_i`, from the declared norm bounds.
    pub fn lipschitz_mu(&self) -> Result<f64> {
        let mut sum_sq = 0.0;
        for (i, d) in self.duals.iter().enumerate() {
            let nb = d.l.norm_bound().ok_or(Error::MissingNormBound { block: i + 1 })?;
            sum_sq += nb * nb;
        }
        let max_mu = self.duals.iter().map(|d| d.q.mu()).fold(self.primal.q.mu(), f64::max);
        Ok(sum_sq.sqrt() + max_mu)
    }

    pub(crate) fn check_shape(&self, u: &BlockVector) -> Result<()> {
        if u.shape() == self.shape {
            Ok(())
        } else {
            Err(Error::Shape(format!("expected {:?}, got {:?}", self.shape, u.shape())))
        }
    }
}

/// `S u` with the (possibly perturbed) operators of step `n`. The primal sum
/// `Σ_i L_i* v_i` is accumulated in index order.
pub(crate) fn apply_s(ops: &PerturbedBundleAtN<'_>, u: &BlockVector) -> BlockVector {
    let bundle = ops.bundle();
    let x = u.primal();
    let mut primal = ops.q(0, x);
    for (i, d) in bundle.duals().iter().enumerate() {
        let lt = d.l.adjoint(u.dual(i));
        for (p, t) in primal.iter_mut().zip(&lt) {
            *p += t;
        }
    }
    let duals = bundle
        .duals()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let qv = ops.q(i + 1, u.dual(i));
            let lx = d.l.apply(x);
            linalg::sub(&qv, &lx)
        })
        .collect();
    BlockVector::from_parts(primal, duals)
}

pub(crate) fn apply_b(ops: &PerturbedBundleAtN<'_>, u: &BlockVector) -> BlockVector {
    let primal = ops.b(0, u.primal());
    let duals = (0..ops.bundle().m()).map(|i| ops.b(i + 1, u.dual(i))).collect();
    BlockVector::from_parts(primal, duals)
}

pub(crate) fn apply_resolvent(bundle: &OperatorBundle, gamma: f64, u: &BlockVector) -> BlockVector {
    let p = bundle.primal();
    let shifted = linalg::lincomb(1.0, u.primal(), gamma, &p.z);
    let primal = p.a.eval(gamma, &shifted);
    let duals = bundle
        .duals()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let shifted = linalg::lincomb(1.0, u.dual(i), -gamma, &d.r);
            d.a.eval(gamma, &shifted)
        })
        .collect();
    BlockVector::from_parts(primal, duals)
}

/// `S: (x, v) ↦ (Qx + Σ L_i* v_i, Q_i v_i − L_i x)` for the exact operators.
pub fn assemble_s(bundle: &OperatorBundle) -> impl Fn(&BlockVector) -> Result<BlockVector> + '_ {
    move |u| {
        bundle.check_shape(u)?;
        Ok(apply_s(&PerturbedBundleAtN::exact(bundle), u))
    }
}

/// Blockwise bold `B`, together with its constant `β′ = min_i β_i`.
pub fn assemble_b(bundle: &OperatorBundle) -> (impl Fn(&BlockVector) -> Result<BlockVector> + '_, f64) {
    let map = move |u: &BlockVector| {
        bundle.check_shape(u)?;
        Ok(apply_b(&PerturbedBundleAtN::exact(bundle), u))
    };
    (map, bundle.beta_prime())
}

/// `J_{γA}(x, v) = (J_{γA}(x + γz), J_{γA_i}(v_i − γ r_i))`.
pub fn resolvent_abold(bundle: &OperatorBundle, gamma: f64, xb: &BlockVector) -> Result<BlockVector> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("resolvent index must be > 0, got {gamma}")));
    }
    bundle.check_shape(xb)?;
    Ok(apply_resolvent(bundle, gamma, xb))
}

pub fn lipschitz_mu(bundle: &OperatorBundle) -> Result<f64> {
    bundle.lipschitz_mu()
}

/// The assembled triple `(bold A, S, bold B)` with its constants.
#[derive(Debug, Clone)]
pub struct ProductOperators {
    bundle: OperatorBundle,
    mu: f64,
    beta_prime: f64,
}

impl ProductOperators {
    /// Requires a norm bound on every `L_i`.
    pub fn new(bundle: &OperatorBundle) -> Result<Self> {
        Ok(Self { mu: bundle.lipschitz_mu()?, beta_prime: bundle.beta_prime(), bundle: bundle.clone() })
    }

    pub fn bundle(&self) -> &OperatorBundle {
        &self.bundle
    }

    /// Lipschitz constant of `S`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Cocoercivity constant of the bold `B`.
    pub fn beta_prime(&self) -> f64 {
        self.beta_prime
    }

    pub fn s(&self, u: &BlockVector) -> Result<BlockVector> {
        assemble_s(&self.bundle)(u)
    }

    pub fn b(&self, u: &BlockVector) -> Result<BlockVector> {
        assemble_b(&self.bundle).0(u)
    }

    pub fn resolvent(&self, gamma: f64, u: &BlockVector) -> Result<BlockVector> {
        resolvent_abold(&self.bundle, gamma, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{prox_factory, ProxFunction};
    use nalgebra::DMatrix;

    fn bv(p: &[f64], d: &[&[f64]]) -> BlockVector {
        BlockVector::new(p.to_vec(), d.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    fn zero_dual(dim: usize, l: LinearMap) -> DualBlock {
        DualBlock {
            a: ResolventOperator::zero(dim),
            b: CocoerciveOperator::zero(dim),
            q: LipschitzMonotoneOperator::zero(dim),
            l,
            r: vec![0.0; dim],
        }
    }

    fn zero_primal(dim: usize) -> PrimalBlock {
        PrimalBlock {
            a: ResolventOperator::zero(dim),
            b: CocoerciveOperator::zero(dim),
            q: LipschitzMonotoneOperator::zero(dim),
            z: vec![0.0; dim],
        }
    }

    #[test]
    fn s_examples() {
        let bundle = OperatorBundle::new(zero_primal(1), vec![zero_dual(1, LinearMap::identity(1))]).unwrap();
        let s = assemble_s(&bundle);
        assert_eq!(s(&bv(&[1.0], &[&[2.0]])).unwrap(), bv(&[2.0], &[&[-1.0]]));
        assert_eq!(s(&bv(&[0.0], &[&[0.0]])).unwrap(), bv(&[0.0], &[&[0.0]]));
        assert!(s(&bv(&[0.0, 1.0], &[&[0.0]])).is_err());
    }

    #[test]
    fn b_examples() {
        let mut primal = zero_primal(1);
        primal.b = CocoerciveOperator::identity(1);
        let mut d = zero_dual(1, LinearMap::identity(1));
        d.b = CocoerciveOperator::identity(1);
        let bundle = OperatorBundle::new(primal, vec![d]).unwrap();
        let (b, beta) = assemble_b(&bundle);
        assert_eq!(b(&bv(&[3.0], &[&[-2.0]])).unwrap(), bv(&[3.0], &[&[-2.0]]));
        assert_eq!(beta, 1.0);
        assert_eq!(b(&bv(&[0.0], &[&[0.0]])).unwrap(), bv(&[0.0], &[&[0.0]]));

        // β_0 = 2, β_1 = 1, β_2 = 3 → β' = 1
        let mut primal = zero_primal(1);
        primal.b = CocoerciveOperator::scaled_identity(1, 0.5, vec![0.0]).unwrap();
        let mut d1 = zero_dual(1, LinearMap::identity(1));
        d1.b = CocoerciveOperator::identity(1);
        let mut d2 = zero_dual(1, LinearMap::identity(1));
        d2.b = CocoerciveOperator::scaled_identity(1, 1.0 / 3.0, vec![0.0]).unwrap();
        let bundle = OperatorBundle::new(primal, vec![d1, d2]).unwrap();
        assert_eq!(bundle.beta_prime(), 1.0);
    }

    #[test]
    fn resolvent_examples() {
        let bundle = OperatorBundle::new(zero_primal(1), vec![zero_dual(1, LinearMap::identity(1))]).unwrap();
        let u = bv(&[1.5], &[&[-0.5]]);
        assert_eq!(resolvent_abold(&bundle, 0.7, &u).unwrap(), u);

        let mut primal = zero_primal(1);
        primal.z = vec![1.0];
        let mut d = zero_dual(1, LinearMap::identity(1));
        d.r = vec![1.0];
        let bundle = OperatorBundle::new(primal, vec![d]).unwrap();
        assert_eq!(resolvent_abold(&bundle, 2.0, &bv(&[0.0], &[&[0.0]])).unwrap(), bv(&[2.0], &[&[-2.0]]));
        assert!(resolvent_abold(&bundle, 0.0, &bv(&[0.0], &[&[0.0]])).is_err());
    }

    #[test]
    fn mu_examples() {
        let bundle = OperatorBundle::new(zero_primal(1), vec![zero_dual(1, LinearMap::identity(1))]).unwrap();
        assert_eq!(lipschitz_mu(&bundle).unwrap(), 1.0);

        let mut primal = zero_primal(2);
        primal.q = LipschitzMonotoneOperator::rotation(std::f64::consts::FRAC_PI_2, 2.0).unwrap();
        let mut d1 = zero_dual(2, LinearMap::scaled_identity(2, 3.0));
        d1.q = LipschitzMonotoneOperator::linear(DMatrix::identity(2, 2)).unwrap();
        let d2 = zero_dual(2, LinearMap::scaled_identity(2, 4.0));
        let bundle = OperatorBundle::new(primal, vec![d1, d2]).unwrap();
        assert!((lipschitz_mu(&bundle).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn missing_norm_bound_is_an_error() {
        let l = LinearMap::dense(DMatrix::from_row_slice(1, 1, &[2.0]));
        let bundle = OperatorBundle::new(zero_primal(1), vec![zero_dual(1, l)]).unwrap();
        assert_eq!(lipschitz_mu(&bundle), Err(Error::MissingNormBound { block: 1 }));
        let est = bundle.with_estimated_norms(0);
        assert!((lipschitz_mu(&est).unwrap() - 2.0 * 1.01).abs() < 1e-8);
    }

    #[test]
    fn zero_coupling_is_rejected() {
        let err = OperatorBundle::new(zero_primal(1), vec![zero_dual(1, LinearMap::scaled_identity(1, 0.0))]);
        assert!(matches!(err, Err(Error::ZeroCoupling)));
        let err = OperatorBundle::new(zero_primal(1), vec![zero_dual(2, LinearMap::identity(1))]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn resolvent_with_prox_blocks() {
        let mut primal = zero_primal(2);
        primal.a = prox_factory(&ProxFunction::L1 { dim: 2, weight: 1.0 }).unwrap();
        let mut d = zero_dual(1, LinearMap::dense_exact_norm(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])));
        d.a = prox_factory(&ProxFunction::Box { lower: vec![-1.0], upper: vec![1.0] }).unwrap();
        let bundle = OperatorBundle::new(primal, vec![d]).unwrap();
        let out = resolvent_abold(&bundle, 0.5, &bv(&[2.0, 0.2], &[&[3.0]])).unwrap();
        assert_eq!(out, bv(&[1.5, 0.0], &[&[1.0]]));
    }
}
