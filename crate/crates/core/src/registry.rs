//! Serializable descriptions of problems, used by configuration files and
//! by the oracles that need the algebraic form of each operator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::convex::{CouplingTerm, MinProblem, SmoothTerm, StronglyConvexTerm};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::{
    conjugate_prox, prox_factory, CocoerciveOperator, LinearMap, LipschitzMonotoneOperator, ProxFunction,
    ResolventOperator,
};
use crate::product::{DualBlock, OperatorBundle, PrimalBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CocoerciveSpec {
    Zero { dim: usize },
    /// `x ↦ scale · (x − center)`.
    ScaledIdentity { scale: f64, center: Vec<f64> },
    /// `x ↦ P x + shift` with `P` symmetric positive semidefinite.
    Affine {
        matrix: Vec<Vec<f64>>,
        shift: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
}

impl CocoerciveSpec {
    pub fn build(&self) -> Result<CocoerciveOperator> {
        match self {
            Self::Zero { dim } => Ok(CocoerciveOperator::zero(*dim)),
            Self::ScaledIdentity { scale, center } => {
                CocoerciveOperator::scaled_identity(center.len(), *scale, center.clone())
            }
            Self::Affine { matrix, shift, beta } => {
                CocoerciveOperator::affine(linalg::matrix_from_rows(matrix)?, shift.clone(), *beta)
            }
        }
    }

    /// `(M, c)` with the operator equal to `x ↦ M x + c`.
    pub fn affine_parts(&self) -> Result<(DMatrix<f64>, Vec<f64>)> {
        match self {
            Self::Zero { dim } => Ok((DMatrix::zeros(*dim, *dim), vec![0.0; *dim])),
            Self::ScaledIdentity { scale, center } => {
                let n = center.len();
                Ok((DMatrix::identity(n, n) * *scale, linalg::scale(-scale, center)))
            }
            Self::Affine { matrix, shift, .. } => Ok((linalg::matrix_from_rows(matrix)?, shift.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LipschitzSpec {
    Zero { dim: usize },
    /// `x ↦ M x` with `M + Mᵀ` positive semidefinite.
    Linear { matrix: Vec<Vec<f64>> },
    /// Planar rotation by `angle`, scaled by `scale`.
    Rotation { angle: f64, scale: f64 },
}

impl LipschitzSpec {
    pub fn build(&self) -> Result<LipschitzMonotoneOperator> {
        match self {
            Self::Zero { dim } => Ok(LipschitzMonotoneOperator::zero(*dim)),
            Self::Linear { matrix } => LipschitzMonotoneOperator::linear(linalg::matrix_from_rows(matrix)?),
            Self::Rotation { angle, scale } => LipschitzMonotoneOperator::rotation(*angle, *scale),
        }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            Self::Zero { dim } => Ok(DMatrix::zeros(*dim, *dim)),
            Self::Linear { matrix } => linalg::matrix_from_rows(matrix),
            Self::Rotation { angle, scale } => {
                let (s, c) = angle.sin_cos();
                Ok(DMatrix::from_row_slice(2, 2, &[scale * c, -scale * s, scale * s, scale * c]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearSpec {
    Identity { dim: usize },
    ScaledIdentity { dim: usize, scale: f64 },
    Diagonal { diag: Vec<f64> },
    /// Dense matrix; without `norm_bound` the norm is estimated by power
    /// iteration and inflated by a safety factor.
    Dense {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm_bound: Option<f64>,
    },
    /// `(Dx)_k = x_{k+1} − x_k` from `R^n` to `R^{n−1}`.
    ForwardDifference { n: usize },
    Zero { rows: usize, cols: usize },
}

impl LinearSpec {
    pub fn build(&self, seed: u64) -> Result<LinearMap> {
        Ok(match self {
            Self::Identity { dim } => LinearMap::identity(*dim),
            Self::ScaledIdentity { dim, scale } => LinearMap::scaled_identity(*dim, *scale),
            Self::Diagonal { diag } => LinearMap::diagonal(diag.clone()),
            Self::Dense { matrix, norm_bound } => {
                let m = LinearMap::dense(linalg::matrix_from_rows(matrix)?);
                match norm_bound {
                    Some(b) => m.with_norm_bound(*b),
                    None => m.with_estimated_norm(seed),
                }
            }
            Self::ForwardDifference { n } => LinearMap::forward_difference(*n)?,
            Self::Zero { rows, cols } => LinearMap::zero(*rows, *cols),
        })
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        Ok(match self {
            Self::Identity { dim } => DMatrix::identity(*dim, *dim),
            Self::ScaledIdentity { dim, scale } => DMatrix::identity(*dim, *dim) * *scale,
            Self::Diagonal { diag } => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
            Self::Dense { matrix, .. } => linalg::matrix_from_rows(matrix)?,
            Self::ForwardDifference { n } => {
                if *n < 2 {
                    return Err(Error::InvalidParameter(format!("forward difference needs n >= 2, got {n}")));
                }
                let mut d = DMatrix::zeros(n - 1, *n);
                for k in 0..n - 1 {
                    d[(k, k)] = -1.0;
                    d[(k, k + 1)] = 1.0;
                }
                d
            }
            Self::Zero { rows, cols } => DMatrix::zeros(*rows, *cols),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalSpec {
    pub a: ProxFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<CocoerciveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<LipschitzSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualSpec {
    /// `A_i = ∂a`, or `∂a*` when `conjugate` is set.
    pub a: ProxFunction,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub conjugate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<CocoerciveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<LipschitzSpec>,
    pub l: LinearSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
}

/// A raw inclusion: every block given by registered families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub primal: PrimalSpec,
    pub duals: Vec<DualSpec>,
}

fn check_dim(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what} has dimension {got}, expected {expected}")))
    }
}

impl BundleSpec {
    /// Builds the bundle; `seed` drives norm estimation of dense maps
    /// (block `i` uses `seed + i`).
    pub fn build(&self, seed: u64) -> Result<OperatorBundle> {
        let n = self.primal.a.dim();
        let b = match &self.primal.b {
            Some(s) => s.build()?,
            None => CocoerciveOperator::zero(n),
        };
        let q = match &self.primal.q {
            Some(s) => s.build()?,
            None => LipschitzMonotoneOperator::zero(n),
        };
        let z = self.primal.z.clone().unwrap_or_else(|| vec![0.0; n]);
        check_dim("primal b", b.dim(), n)?;
        check_dim("primal q", q.dim(), n)?;
        let primal = PrimalBlock { a: prox_factory(&self.primal.a)?, b, q, z };

        let duals = self
            .duals
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let k = d.a.dim();
                let base = prox_factory(&d.a)?;
                let a: ResolventOperator = if d.conjugate { conjugate_prox(&base) } else { base };
                let b = match &d.b {
                    Some(s) => s.build()?,
                    None => CocoerciveOperator::zero(k),
                };
                let q = match &d.q {
                    Some(s) => s.build()?,
                    None => LipschitzMonotoneOperator::zero(k),
                };
                check_dim(&format!("dual {} b", i + 1), b.dim(), k)?;
                check_dim(&format!("dual {} q", i + 1), q.dim(), k)?;
                Ok(DualBlock {
                    a,
                    b,
                    q,
                    l: d.l.build(seed.wrapping_add(i as u64))?,
                    r: d.r.clone().unwrap_or_else(|| vec![0.0; k]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        OperatorBundle::new(primal, duals)
    }
}

/// `h(x) = ½ (x − center)ᵀ P (x − center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothSpec {
    Quadratic {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
}

/// `ℓ = ‖·‖²/(2·scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EllSpec {
    ScaledSqNorm { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub g: ProxFunction,
    pub ell: EllSpec,
    pub l: LinearSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinProblemSpec {
    pub f: ProxFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<SmoothSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    pub terms: Vec<TermSpec>,
}

impl MinProblemSpec {
    pub fn build(&self, seed: u64) -> Result<MinProblem> {
        let n = self.f.dim();
        let h = match &self.h {
            None => SmoothTerm::zero(n),
            Some(SmoothSpec::Quadratic { matrix, center }) => SmoothTerm::quadratic(
                linalg::matrix_from_rows(matrix)?,
                center.clone().unwrap_or_else(|| vec![0.0; n]),
            )?,
        };
        let terms = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let k = t.g.dim();
                let EllSpec::ScaledSqNorm { scale } = t.ell;
                Ok(CouplingTerm {
                    g: t.g.clone(),
                    ell: StronglyConvexTerm::scaled_sq_norm(k, scale)?,
                    l: t.l.build(seed.wrapping_add(i as u64))?,
                    r: t.r.clone().unwrap_or_else(|| vec![0.0; k]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MinProblem::new(self.f.clone(), h, self.z.clone().unwrap_or_else(|| vec![0.0; n]), terms)
    }

    /// The equivalent raw inclusion.
    pub fn to_bundle_spec(&self) -> Result<BundleSpec> {
        let n = self.f.dim();
        let b = match &self.h {
            None => None,
            Some(SmoothSpec::Quadratic { matrix, center }) => {
                let p = linalg::matrix_from_rows(matrix)?;
                let c = center.clone().unwrap_or_else(|| vec![0.0; n]);
                check_dim("h matrix rows", p.nrows(), n)?;
                check_dim("h matrix columns", p.ncols(), n)?;
                check_dim("h center", c.len(), n)?;
                Some(CocoerciveSpec::Affine {
                    matrix: matrix.clone(),
                    shift: linalg::scale(-1.0, &linalg::matvec(&p, &c)),
                    beta: None,
                })
            }
        };
        let duals = self
            .terms
            .iter()
            .map(|t| {
                let k = t.g.dim();
                let EllSpec::ScaledSqNorm { scale } = t.ell;
                DualSpec {
                    a: t.g.clone(),
                    conjugate: true,
                    b: Some(CocoerciveSpec::ScaledIdentity { scale, center: vec![0.0; k] }),
                    q: None,
                    l: t.l.clone(),
                    r: t.r.clone(),
                }
            })
            .collect();
        Ok(BundleSpec { primal: PrimalSpec { a: self.f.clone(), b, q: None, z: self.z.clone() }, duals })
    }
}
