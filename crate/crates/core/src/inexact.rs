//! Inexact evaluations of the single-valued operators.
//!
//! At step `n` every block `k ∈ {0, …, m}` (0 = primal) replaces its
//! cocoercive and Lipschitz operators by
//!
//! ```text
//! B_{k,n} = B_k + κ_{k,n} R_B,    Q_{k,n} = Q_k + κ_{k,n} R_Q,
//! ```
//!
//! where `R_B`, `R_Q` are 1-Lipschitz maps vanishing at anchors `c_k`, `d_k`.
//! Hence `B_{k,n} − B_k` is `κ_{k,n}`-Lipschitz and `B_{k,n} c_k = B_k c_k`
//! hold by construction. Summability of `κ_{k,·}` is certified from the
//! closed form of the sequence, never from a numerical tail.

use std::fmt;
use std::sync::Arc;

use crate::block::{BlockVector, SpaceShape};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::VectorMap;
use crate::product::OperatorBundle;

/// A nonnegative sequence `n ↦ κ_n`.
#[derive(Clone)]
pub enum KappaSequence {
    Zero,
    /// `scale · ratio^n` with `0 ≤ ratio < 1`.
    Geometric { scale: f64, ratio: f64 },
    /// Listed values for `n < len`, zero afterwards.
    FiniteSupport(Vec<f64>),
    /// Arbitrary sequence; cannot be certified summable or bounded.
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for KappaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Geometric { scale, ratio } => write!(f, "Geometric {{ scale: {scale}, ratio: {ratio} }}"),
            Self::FiniteSupport(v) => f.debug_tuple("FiniteSupport").field(v).finish(),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl KappaSequence {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Geometric { scale, ratio } => scale * ratio.powi(n.min(i32::MAX as usize) as i32),
            Self::FiniteSupport(v) => v.get(n).copied().unwrap_or(0.0),
            Self::Custom(f) => f(n),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Geometric { scale, ratio } => {
                if !(*scale >= 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidParameter(format!("geometric scale must be >= 0, got {scale}")));
                }
                if !(*ratio >= 0.0 && *ratio < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "geometric ratio must lie in [0, 1) for summability, got {ratio}"
                    )));
                }
            }
            Self::FiniteSupport(v) => {
                if v.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
                    return Err(Error::InvalidParameter("kappa values must be finite and >= 0".into()));
                }
            }
            Self::Zero | Self::Custom(_) => {}
        }
        Ok(())
    }

    /// Closed-form `Σ_n κ_n`, if certifiable.
    pub fn certified_sum(&self) -> Option<f64> {
        match self {
            Self::Zero => Some(0.0),
            Self::Geometric { scale, ratio } => Some(scale / (1.0 - ratio)),
            Self::FiniteSupport(v) => Some(v.iter().sum()),
            Self::Custom(_) => None,
        }
    }

    /// Index after which the sequence is nonincreasing, if known.
    fn monotone_after(&self) -> Option<usize> {
        match self {
            Self::Zero | Self::Geometric { .. } => Some(0),
            Self::FiniteSupport(v) => Some(v.len()),
            Self::Custom(_) => None,
        }
    }
}

/// A 1-Lipschitz map vanishing at its anchor.
#[derive(Clone, Default)]
pub enum PerturbationShape {
    /// `x ↦ x − anchor`.
    #[default]
    Affine,
    /// User-supplied map; it must be 1-Lipschitz and vanish at the anchor.
    /// [`audit_condition`] checks both on samples.
    Custom(Arc<dyn VectorMap>),
}

impl fmt::Debug for PerturbationShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine => write!(f, "Affine"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl PerturbationShape {
    fn eval(&self, x: &[f64], anchor: &[f64]) -> Vec<f64> {
        match self {
            Self::Affine => linalg::sub(x, anchor),
            Self::Custom(map) => map.apply(x),
        }
    }
}

/// Perturbation data for one block.
#[derive(Debug, Clone)]
pub struct BlockPerturbation {
    pub kappa: KappaSequence,
    /// Anchor `c_k` where `B_{k,n}` agrees with `B_k`.
    pub anchor_b: Vec<f64>,
    /// Anchor `d_k` where `Q_{k,n}` agrees with `Q_k`.
    pub anchor_q: Vec<f64>,
    pub shape_b: PerturbationShape,
    pub shape_q: PerturbationShape,
}

impl BlockPerturbation {
    /// Affine shapes anchored at the origin.
    pub fn affine(kappa: KappaSequence, dim: usize) -> Self {
        Self {
            kappa,
            anchor_b: vec![0.0; dim],
            anchor_q: vec![0.0; dim],
            shape_b: PerturbationShape::Affine,
            shape_q: PerturbationShape::Affine,
        }
    }
}

/// Per-block perturbation sequences for blocks `0..=m`.
#[derive(Debug, Clone)]
pub struct PerturbationSchedule {
    blocks: Vec<BlockPerturbation>,
}

impl PerturbationSchedule {
    pub fn new(blocks: Vec<BlockPerturbation>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::Shape("a schedule needs entries for the primal block and at least one dual block".into()));
        }
        for b in &blocks {
            b.kappa.validate()?;
            if b.anchor_b.len() != b.anchor_q.len() || !linalg::all_finite(&b.anchor_b) || !linalg::all_finite(&b.anchor_q) {
                return Err(Error::Shape("anchors must be finite and of equal length within a block".into()));
            }
        }
        Ok(Self { blocks })
    }

    /// No perturbation at all.
    pub fn zero(shape: &SpaceShape) -> Self {
        let blocks = (0..=shape.m()).map(|k| BlockPerturbation::affine(KappaSequence::Zero, shape.block_dim(k))).collect();
        Self { blocks }
    }

    /// Geometric schedule with equal per-block constants chosen so that the
    /// aggregate `κ_0 = sqrt(Σ_k κ_{k,0}²)` equals `aggregate`; anchors at 0.
    pub fn geometric(shape: &SpaceShape, aggregate: f64, ratio: f64) -> Result<Self> {
        let per_block = aggregate / ((shape.m() + 1) as f64).sqrt();
        let blocks = (0..=shape.m())
            .map(|k| {
                BlockPerturbation::affine(KappaSequence::Geometric { scale: per_block, ratio }, shape.block_dim(k))
            })
            .collect();
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[BlockPerturbation] {
        &self.blocks
    }

    pub fn kappa(&self, block: usize, n: usize) -> f64 {
        self.blocks[block].kappa.value(n)
    }

    pub fn check_shape(&self, shape: &SpaceShape) -> Result<()> {
        if self.blocks.len() != shape.m() + 1 {
            return Err(Error::Shape(format!(
                "schedule has {} blocks, problem has {}",
                self.blocks.len(),
                shape.m() + 1
            )));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.anchor_b.len() != shape.block_dim(k) {
                return Err(Error::Shape(format!(
                    "anchors of block {k} have length {}, block has dim {}",
                    b.anchor_b.len(),
                    shape.block_dim(k)
                )));
            }
        }
        Ok(())
    }

    /// Certified upper bound on `Σ_n κ_n` via `κ_n ≤ Σ_k κ_{k,n}`.
    pub fn summability_bound(&self) -> Result<f64> {
        self.blocks.iter().try_fold(0.0, |acc, b| {
            b.kappa
                .certified_sum()
                .map(|s| acc + s)
                .ok_or_else(|| Error::UncertifiableSchedule("custom kappa sequence".into()))
        })
    }
}

/// `κ_n = sqrt(Σ_{k=0}^m κ_{k,n}²)`.
pub fn kappa_aggregate(schedule: &PerturbationSchedule, n: usize) -> f64 {
    schedule.blocks.iter().map(|b| b.kappa.value(n).powi(2)).sum::<f64>().sqrt()
}

/// `sup_n κ_n`, exact for closed-form schedules: every block is
/// nonincreasing past its support, so the sup is attained in a finite prefix.
pub fn kappa_sup(schedule: &PerturbationSchedule) -> Result<f64> {
    let mut horizon = 0;
    for b in &schedule.blocks {
        horizon = horizon.max(
            b.kappa
                .monotone_after()
                .ok_or_else(|| Error::UncertifiableSchedule("custom kappa sequence has no certifiable sup".into()))?,
        );
    }
    Ok((0..=horizon).map(|n| kappa_aggregate(schedule, n)).fold(0.0, f64::max))
}

/// The single-valued operators of step `n`: exact ones when there is no
/// schedule or `κ_{k,n} = 0`.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedBundleAtN<'a> {
    bundle: &'a OperatorBundle,
    schedule: Option<&'a PerturbationSchedule>,
    n: usize,
}

impl<'a> PerturbedBundleAtN<'a> {
    pub fn exact(bundle: &'a OperatorBundle) -> Self {
        Self { bundle, schedule: None, n: 0 }
    }

    pub(crate) fn at(bundle: &'a OperatorBundle, schedule: Option<&'a PerturbationSchedule>, n: usize) -> Self {
        Self { bundle, schedule, n }
    }

    pub fn bundle(&self) -> &'a OperatorBundle {
        self.bundle
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn kappa(&self, block: usize) -> f64 {
        self.schedule.map_or(0.0, |s| s.kappa(block, self.n))
    }

    /// `B_{k,n} x`; `k = 0` is the primal block.
    pub fn b(&self, block: usize, x: &[f64]) -> Vec<f64> {
        let base = if block == 0 { &self.bundle.primal().b } else { &self.bundle.dual(block - 1).b };
        let mut out = base.apply(x);
        let kappa = self.kappa(block);
        if kappa != 0.0 {
            let p = &self.schedule.expect("kappa > 0 implies a schedule").blocks[block];
            linalg::axpy(&mut out, kappa, &p.shape_b.eval(x, &p.anchor_b));
        }
        out
    }

    /// `Q_{k,n} x`; `k = 0` is the primal block.
    pub fn q(&self, block: usize, x: &[f64]) -> Vec<f64> {
        let base = if block == 0 { &self.bundle.primal().q } else { &self.bundle.dual(block - 1).q };
        let mut out = base.apply(x);
        let kappa = self.kappa(block);
        if kappa != 0.0 {
            let p = &self.schedule.expect("kappa > 0 implies a schedule").blocks[block];
            linalg::axpy(&mut out, kappa, &p.shape_q.eval(x, &p.anchor_q));
        }
        out
    }
}

pub fn perturb<'a>(
    bundle: &'a OperatorBundle,
    schedule: &'a PerturbationSchedule,
    n: usize,
) -> Result<PerturbedBundleAtN<'a>> {
    schedule.check_shape(bundle.shape())?;
    Ok(PerturbedBundleAtN::at(bundle, Some(schedule), n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbedOperator {
    Cocoercive,
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// `‖(T_n−T)x − (T_n−T)y‖ − κ‖x−y‖` exceeded the tolerance by `excess`.
    Lipschitz { excess: f64 },
    /// `‖T_n a − T a‖` at the anchor.
    Anchor { mismatch: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub block: usize,
    pub operator: PerturbedOperator,
    pub n: usize,
    /// Index into the sample list (`None` for anchor checks).
    pub pair: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    /// `min κ‖x−y‖ − ‖(T_n−T)x − (T_n−T)y‖` over all checks.
    pub worst_lipschitz_slack: f64,
    pub worst_anchor_mismatch: f64,
    pub violations: Vec<Violation>,
    /// Certified bound on `Σ_n κ_n`, or `None` if not certifiable.
    pub kappa_sum_bound: Option<f64>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.kappa_sum_bound.is_some()
    }
}

const AUDIT_TOL: f64 = 1e-12;

/// Checks the Lipschitz bound on `T_n − T` over sampled pairs and exact
/// agreement at the anchors, for each listed step `n`. Report only.
pub fn audit_condition(
    schedule: &PerturbationSchedule,
    bundle: &OperatorBundle,
    samples: &[(BlockVector, BlockVector)],
    steps: &[usize],
) -> Result<AuditReport> {
    schedule.check_shape(bundle.shape())?;
    for (x, y) in samples {
        bundle.check_shape(x)?;
        bundle.check_shape(y)?;
    }
    let exact = PerturbedBundleAtN::exact(bundle);
    let mut report = AuditReport {
        worst_lipschitz_slack: f64::INFINITY,
        worst_anchor_mismatch: 0.0,
        violations: Vec::new(),
        kappa_sum_bound: schedule.summability_bound().ok(),
    };

    for &n in steps {
        let ops = PerturbedBundleAtN::at(bundle, Some(schedule), n);
        for (k, p) in schedule.blocks.iter().enumerate() {
            let kappa = p.kappa.value(n);
            for (which, anchor) in [(PerturbedOperator::Cocoercive, &p.anchor_b), (PerturbedOperator::Lipschitz, &p.anchor_q)] {
                let eval = |o: &PerturbedBundleAtN<'_>, x: &[f64]| match which {
                    PerturbedOperator::Cocoercive => o.b(k, x),
                    PerturbedOperator::Lipschitz => o.q(k, x),
                };
                let diff = |x: &[f64]| linalg::sub(&eval(&ops, x), &eval(&exact, x));

                let mismatch = linalg::norm(&diff(anchor));
                report.worst_anchor_mismatch = report.worst_anchor_mismatch.max(mismatch);
                if mismatch > AUDIT_TOL {
                    report.violations.push(Violation {
                        block: k,
                        operator: which,
                        n,
                        pair: None,
                        kind: ViolationKind::Anchor { mismatch },
                    });
                }

                for (idx, (x, y)) in samples.iter().enumerate() {
                    let (xs, ys) = (x.block(k), y.block(k));
                    let lhs = linalg::dist(&diff(xs), &diff(ys));
                    let bound = kappa * linalg::dist(xs, ys);
                    let slack = bound - lhs;
                    report.worst_lipschitz_slack = report.worst_lipschitz_slack.min(slack);
                    if slack < -AUDIT_TOL * (1.0 + bound) {
                        report.violations.push(Violation {
                            block: k,
                            operator: which,
                            n,
                            pair: Some(idx),
                            kind: ViolationKind::Lipschitz { excess: -slack },
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}
