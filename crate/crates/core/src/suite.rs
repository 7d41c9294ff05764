//! Small reference problems with piecewise-affine structure, so that every
//! one of them can be solved exactly by [`crate::oracles::active_set_oracle`].

use crate::error::Result;
use crate::operators::ProxFunction;
use crate::product::OperatorBundle;
use crate::registry::{
    BundleSpec, CocoerciveSpec, DualSpec, EllSpec, LinearSpec, LipschitzSpec, MinProblemSpec, PrimalSpec, SmoothSpec,
    TermSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: &'static str,
    pub spec: BundleSpec,
    /// Present when the inclusion comes from a minimization problem.
    pub min: Option<MinProblemSpec>,
}

impl Instance {
    fn from_min(name: &'static str, min: MinProblemSpec) -> Self {
        let spec = min.to_bundle_spec().expect("suite problems are well formed");
        Self { name, spec, min: Some(min) }
    }

    pub fn bundle(&self) -> Result<OperatorBundle> {
        self.spec.build(0)
    }
}

/// `|x| + ½(x − 3)² + ½x²`, minimized at `x = 1` with dual `v = 1`.
pub fn lasso() -> Instance {
    Instance::from_min(
        "lasso",
        MinProblemSpec {
            f: ProxFunction::L1 { dim: 1, weight: 1.0 },
            h: Some(SmoothSpec::Quadratic { matrix: vec![vec![1.0]], center: Some(vec![3.0]) }),
            z: None,
            terms: vec![TermSpec {
                g: ProxFunction::Box { lower: vec![0.0], upper: vec![0.0] },
                ell: EllSpec::ScaledSqNorm { scale: 1.0 },
                l: LinearSpec::Identity { dim: 1 },
                r: None,
            }],
        },
    )
}

/// `½(x − c)ᵀP(x − c)` over `[0, 1]²`, minimized at `(1, 0)` with value 2.
/// The coupling term is identically zero.
pub fn box_qp() -> Instance {
    Instance::from_min(
        "box_qp",
        MinProblemSpec {
            f: ProxFunction::Box { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0] },
            h: Some(SmoothSpec::Quadratic {
                matrix: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
                center: Some(vec![2.0, -2.0]),
            }),
            z: None,
            terms: vec![TermSpec {
                g: ProxFunction::Zero { dim: 2 },
                ell: EllSpec::ScaledSqNorm { scale: 1.0 },
                l: LinearSpec::Identity { dim: 2 },
                r: None,
            }],
        },
    )
}

/// Denoising of a step signal on a chain of `n` nodes with a smoothed
/// total-variation penalty on forward differences.
pub fn tv_chain(n: usize) -> Instance {
    let signal: Vec<f64> = (0..n)
        .map(|k| {
            let step = if (n / 3..2 * n / 3).contains(&k) { 1.0 } else { 0.0 };
            step + 0.1 * (1.7 * k as f64).sin()
        })
        .collect();
    Instance::from_min(
        "tv_chain",
        MinProblemSpec {
            f: ProxFunction::SqDist { point: signal, weight: 1.0 },
            h: None,
            z: None,
            terms: vec![TermSpec {
                g: ProxFunction::L1 { dim: n - 1, weight: 0.3 },
                ell: EllSpec::ScaledSqNorm { scale: 0.05 },
                l: LinearSpec::ForwardDifference { n },
                r: None,
            }],
        },
    )
}

/// A planar problem whose primal block carries a skew rotation `Q`.
pub fn rotation() -> Instance {
    Instance {
        name: "rotation",
        spec: BundleSpec {
            primal: PrimalSpec {
                a: ProxFunction::L1 { dim: 2, weight: 0.5 },
                b: Some(CocoerciveSpec::ScaledIdentity { scale: 1.0, center: vec![2.0, -1.0] }),
                q: Some(LipschitzSpec::Rotation { angle: std::f64::consts::FRAC_PI_2, scale: 1.0 }),
                z: None,
            },
            duals: vec![DualSpec {
                a: ProxFunction::L1 { dim: 2, weight: 1.0 },
                conjugate: true,
                b: None,
                q: None,
                l: LinearSpec::Diagonal { diag: vec![1.0, 0.5] },
                r: Some(vec![0.5, 0.0]),
            }],
        },
        min: None,
    }
}

/// Three dual blocks of different kinds on a three-dimensional primal space.
pub fn mixed() -> Instance {
    Instance {
        name: "mixed",
        spec: BundleSpec {
            primal: PrimalSpec {
                a: ProxFunction::Box { lower: vec![-1.0; 3], upper: vec![1.0; 3] },
                b: Some(CocoerciveSpec::Affine {
                    matrix: vec![vec![2.0, 0.5, 0.0], vec![0.5, 1.5, 0.25], vec![0.0, 0.25, 1.0]],
                    shift: vec![-2.0, 0.5, -0.75],
                    beta: None,
                }),
                q: None,
                z: Some(vec![0.5, 0.0, 0.0]),
            },
            duals: vec![
                DualSpec {
                    a: ProxFunction::L1 { dim: 2, weight: 0.3 },
                    conjugate: true,
                    b: None,
                    q: None,
                    l: LinearSpec::ForwardDifference { n: 3 },
                    r: None,
                },
                DualSpec {
                    a: ProxFunction::SqDist { point: vec![1.0], weight: 2.0 },
                    conjugate: true,
                    b: Some(CocoerciveSpec::ScaledIdentity { scale: 0.5, center: vec![0.0] }),
                    q: None,
                    l: LinearSpec::Dense { matrix: vec![vec![1.0, 1.0, 1.0]], norm_bound: Some(3f64.sqrt()) },
                    r: Some(vec![0.2]),
                },
                DualSpec {
                    a: ProxFunction::Zero { dim: 2 },
                    conjugate: false,
                    b: Some(CocoerciveSpec::ScaledIdentity { scale: 1.0, center: vec![0.0, 0.0] }),
                    q: Some(LipschitzSpec::Rotation { angle: 0.3, scale: 0.5 }),
                    l: LinearSpec::Dense {
                        matrix: vec![vec![1.0, 0.0, -1.0], vec![0.5, 1.0, 0.0]],
                        norm_bound: None,
                    },
                    r: Some(vec![0.0, -0.3]),
                },
            ],
        },
        min: None,
    }
}

/// Every reference problem, the chain with 10 nodes.
pub fn all() -> Vec<Instance> {
    vec![lasso(), box_qp(), tv_chain(10), rotation(), mixed()]
}
