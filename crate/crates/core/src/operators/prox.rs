//! Closed-form proximity operators `prox_{γf}(x) = argmin_y f(y) + ‖x−y‖²/(2γ)`
//! for a small registry of convex function families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ResolventOperator;
use crate::error::{Error, Result};
use crate::linalg;

/// Indicator functions accept points this far outside their set (scaled by
/// `1 + |bound|`), so that projections evaluated in floating point count as
/// feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Registered proper lower-semicontinuous convex function families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProxFunction {
    /// `f ≡ 0` on `R^dim`.
    Zero { dim: usize },
    /// `weight · ‖x‖₁`.
    L1 { dim: usize, weight: f64 },
    /// `(weight/2) ‖x − point‖²`.
    SqDist { point: Vec<f64>, weight: f64 },
    /// Indicator of `[lower, upper]` (componentwise; infinite bounds allowed).
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Indicator of the closed Euclidean ball.
    L2Ball { center: Vec<f64>, radius: f64 },
    /// `½⟨x, Px⟩ + ⟨b, x⟩` with `P` symmetric positive semidefinite (rows).
    Quadratic { p: Vec<Vec<f64>>, b: Vec<f64> },
    /// Block-separable sum: part `k` acts on the next `parts[k].dim()` coordinates.
    Separable { parts: Vec<ProxFunction> },
}

fn within(t: f64, lo: f64, hi: f64) -> bool {
    t >= lo - FEASIBILITY_TOL * (1.0 + lo.abs()) && t <= hi + FEASIBILITY_TOL * (1.0 + hi.abs())
}

fn soft_threshold(t: f64, thr: f64) -> f64 {
    if t > thr {
        t - thr
    } else if t < -thr {
        t + thr
    } else {
        0.0
    }
}

impl ProxFunction {
    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::L1 { dim, .. } => *dim,
            Self::SqDist { point, .. } => point.len(),
            Self::Box { lower, .. } => lower.len(),
            Self::L2Ball { center, .. } => center.len(),
            Self::Quadratic { b, .. } => b.len(),
            Self::Separable { parts } => parts.iter().map(Self::dim).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64], what: &str| {
            if linalg::all_finite(v) {
                Ok(())
            } else {
                Err(Error::NonFinite(what.to_string()))
            }
        };
        match self {
            Self::Zero { dim } => {
                if *dim == 0 {
                    return Err(Error::Shape("zero function needs dim >= 1".into()));
                }
            }
            Self::L1 { dim, weight } => {
                if *dim == 0 {
                    return Err(Error::Shape("l1 needs dim >= 1".into()));
                }
                if !(*weight >= 0.0) || !weight.is_finite() {
                    return Err(Error::InvalidParameter(format!("l1 weight must be finite and >= 0, got {weight}")));
                }
            }
            Self::SqDist { point, weight } => {
                if point.is_empty() {
                    return Err(Error::Shape("sq_dist needs a non-empty point".into()));
                }
                finite(point, "sq_dist point")?;
                if !(*weight >= 0.0) || !weight.is_finite() {
                    return Err(Error::InvalidParameter(format!("sq_dist weight must be finite and >= 0, got {weight}")));
                }
            }
            Self::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Shape("box bounds must be non-empty and of equal length".into()));
                }
                if lower.iter().chain(upper).any(|x| x.is_nan()) {
                    return Err(Error::NonFinite("box bounds".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY) {
                    return Err(Error::InvalidParameter("box needs lower <= upper with a nonempty interval".into()));
                }
            }
            Self::L2Ball { center, radius } => {
                if center.is_empty() {
                    return Err(Error::Shape("l2_ball needs a non-empty center".into()));
                }
                finite(center, "l2_ball center")?;
                if !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidParameter(format!("radius must be finite and >= 0, got {radius}")));
                }
            }
            Self::Quadratic { p, b } => {
                let m = linalg::matrix_from_rows(p)?;
                if !m.is_square() || m.nrows() != b.len() {
                    return Err(Error::Shape("quadratic needs a square P matching b".into()));
                }
                finite(b, "quadratic offset")?;
                if !linalg::is_symmetric(&m, 1e-12) {
                    return Err(Error::InvalidParameter("quadratic P must be symmetric".into()));
                }
                let lo = linalg::symmetric_eigenvalues(&m)[0];
                if lo < -1e-12 * m.amax().max(1.0) {
                    return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lo });
                }
            }
            Self::Separable { parts } => {
                if parts.is_empty() {
                    return Err(Error::Shape("separable needs at least one part".into()));
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// `prox_{γf}(x)`, computed from the closed form of the family.
    pub fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("prox index must be > 0, got {gamma}")));
        }
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("prox expects dim {}, got {}", self.dim(), x.len())));
        }
        Ok(self.prox_unchecked(gamma, x))
    }

    fn prox_unchecked(&self, gamma: f64, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Zero { .. } => x.to_vec(),
            Self::L1 { weight, .. } => x.iter().map(|&t| soft_threshold(t, gamma * weight)).collect(),
            Self::SqDist { point, weight } => {
                let gw = gamma * weight;
                x.iter().zip(point).map(|(&t, &a)| (t + gw * a) / (1.0 + gw)).collect()
            }
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&t, (&l, &u))| t.max(l).min(u))
                .collect(),
            Self::L2Ball { center, radius } => project_ball(x, center, *radius),
            Self::Quadratic { p, b } => {
                // (I + γP) y = x − γ b
                let n = b.len();
                let m = DMatrix::from_fn(n, n, |i, j| gamma * p[i][j] + if i == j { 1.0 } else { 0.0 });
                let rhs = DVector::from_iterator(n, x.iter().zip(b).map(|(t, bb)| t - gamma * bb));
                let chol = m.cholesky().expect("I + γP is positive definite for PSD P");
                chol.solve(&rhs).as_slice().to_vec()
            }
            Self::Separable { parts } => {
                let mut out = Vec::with_capacity(x.len());
                let mut offset = 0;
                for part in parts {
                    let d = part.dim();
                    out.extend(part.prox_unchecked(gamma, &x[offset..offset + d]));
                    offset += d;
                }
                out
            }
        }
    }

    /// `f(x)`; `+∞` outside the domain of indicator families.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero { .. } => 0.0,
            Self::L1 { weight, .. } => weight * x.iter().map(|t| t.abs()).sum::<f64>(),
            Self::SqDist { point, weight } => 0.5 * weight * linalg::dist(x, point).powi(2),
            Self::Box { lower, upper } => {
                if x.iter().zip(lower.iter().zip(upper)).all(|(&t, (&l, &u))| within(t, l, u)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::L2Ball { center, radius } => {
                if within(linalg::dist(x, center), 0.0, *radius) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Quadratic { p, b } => {
                let px: Vec<f64> = p.iter().map(|row| linalg::dot(row, x)).collect();
                0.5 * linalg::dot(x, &px) + linalg::dot(b, x)
            }
            Self::Separable { parts } => {
                let mut offset = 0;
                let mut total = 0.0;
                for part in parts {
                    let d = part.dim();
                    total += part.value(&x[offset..offset + d]);
                    offset += d;
                }
                total
            }
        }
    }

    /// Fenchel conjugate `f*(u)`, or `None` when no closed form is
    /// registered (quadratic with singular `P`).
    pub fn conjugate_value(&self, u: &[f64]) -> Option<f64> {
        let zero_indicator = |u: &[f64]| {
            if u.iter().all(|t| t.abs() <= FEASIBILITY_TOL) {
                0.0
            } else {
                f64::INFINITY
            }
        };
        match self {
            Self::Zero { .. } => Some(zero_indicator(u)),
            Self::L1 { weight, .. } => Some(if u.iter().all(|&t| within(t.abs(), 0.0, *weight)) {
                0.0
            } else {
                f64::INFINITY
            }),
            Self::SqDist { point, weight } => {
                if *weight == 0.0 {
                    Some(zero_indicator(u))
                } else {
                    Some(linalg::norm_sq(u) / (2.0 * weight) + linalg::dot(point, u))
                }
            }
            Self::Box { lower, upper } => Some(
                u.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&t, (&l, &h))| {
                        if t > 0.0 {
                            t * h
                        } else if t < 0.0 {
                            t * l
                        } else {
                            0.0
                        }
                    })
                    .sum(),
            ),
            Self::L2Ball { center, radius } => Some(linalg::dot(center, u) + radius * linalg::norm(u)),
            Self::Quadratic { p, b } => {
                let m = linalg::matrix_from_rows(p).ok()?;
                let ev = linalg::symmetric_eigenvalues(&m);
                if ev[0] <= 1e-12 * ev[ev.len() - 1].abs().max(1.0) {
                    return None;
                }
                let d = DVector::from_iterator(b.len(), u.iter().zip(b).map(|(a, c)| a - c));
                let sol = m.cholesky()?.solve(&d);
                Some(0.5 * d.dot(&sol))
            }
            Self::Separable { parts } => {
                let mut offset = 0;
                let mut total = 0.0;
                for part in parts {
                    let d = part.dim();
                    total += part.conjugate_value(&u[offset..offset + d])?;
                    offset += d;
                }
                Some(total)
            }
        }
    }

    /// True when `f(x) = Σ_j φ_j(x_j)`.
    pub fn is_coordinate_separable(&self) -> bool {
        match self {
            Self::Zero { .. } | Self::L1 { .. } | Self::SqDist { .. } | Self::Box { .. } => true,
            Self::L2Ball { center, .. } => center.len() == 1,
            Self::Quadratic { p, .. } => p
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| i == j || v == 0.0)),
            Self::Separable { parts } => parts.iter().all(Self::is_coordinate_separable),
        }
    }

    /// `φ_j(t)` for coordinate-separable families.
    pub fn coordinate_value(&self, j: usize, t: f64) -> Result<f64> {
        if !self.is_coordinate_separable() {
            return Err(Error::NonSeparable(format!("{self:?}")));
        }
        Ok(match self {
            Self::Zero { .. } => 0.0,
            Self::L1 { weight, .. } => weight * t.abs(),
            Self::SqDist { point, weight } => 0.5 * weight * (t - point[j]).powi(2),
            Self::Box { lower, upper } => {
                if within(t, lower[j], upper[j]) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::L2Ball { center, radius } => {
                if within((t - center[0]).abs(), 0.0, *radius) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Quadratic { p, b } => 0.5 * p[j][j] * t * t + b[j] * t,
            Self::Separable { parts } => {
                let (part, local) = locate(parts, j);
                part.coordinate_value(local, t)?
            }
        })
    }

    /// Closed domain of `φ_j` for coordinate-separable families.
    pub fn coordinate_domain(&self, j: usize) -> (f64, f64) {
        match self {
            Self::Box { lower, upper } => (lower[j], upper[j]),
            Self::L2Ball { center, radius } if center.len() == 1 => (center[0] - radius, center[0] + radius),
            Self::Separable { parts } => {
                let (part, local) = locate(parts, j);
                part.coordinate_domain(local)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// A subgradient of the finite-valued parts; indicator parts contribute
    /// zero (they are handled by [`ProxFunction::project_domain`]).
    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Zero { .. } | Self::Box { .. } | Self::L2Ball { .. } => vec![0.0; x.len()],
            Self::L1 { weight, .. } => x
                .iter()
                .map(|&t| if t > 0.0 { *weight } else if t < 0.0 { -weight } else { 0.0 })
                .collect(),
            Self::SqDist { point, weight } => x.iter().zip(point).map(|(t, a)| weight * (t - a)).collect(),
            Self::Quadratic { p, b } => p.iter().zip(b).map(|(row, bb)| linalg::dot(row, x) + bb).collect(),
            Self::Separable { parts } => map_parts(parts, x, |p, s| p.subgradient(s)),
        }
    }

    /// Projection onto the domain of the indicator parts (identity on the
    /// finite-valued parts).
    pub fn project_domain(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Box { .. } | Self::L2Ball { .. } => self.prox_unchecked(1.0, x),
            Self::Separable { parts } => map_parts(parts, x, |p, s| p.project_domain(s)),
            _ => x.to_vec(),
        }
    }
}

fn locate(parts: &[ProxFunction], j: usize) -> (&ProxFunction, usize) {
    let mut offset = 0;
    for part in parts {
        let d = part.dim();
        if j < offset + d {
            return (part, j - offset);
        }
        offset += d;
    }
    panic!("coordinate {j} out of range");
}

fn map_parts(parts: &[ProxFunction], x: &[f64], f: impl Fn(&ProxFunction, &[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut offset = 0;
    for part in parts {
        let d = part.dim();
        out.extend(f(part, &x[offset..offset + d]));
        offset += d;
    }
    out
}

fn project_ball(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let d = linalg::dist(x, center);
    if d <= radius {
        x.to_vec()
    } else {
        let s = radius / d;
        x.iter().zip(center).map(|(t, c)| c + s * (t - c)).collect()
    }
}

/// Builds the resolvent `γ ↦ prox_{γf}` for a registered family after
/// validating it. Quadratic families cache an eigendecomposition of `P` so
/// that each call is a pair of matrix-vector products.
pub fn prox_factory(f: &ProxFunction) -> Result<ResolventOperator> {
    f.validate()?;
    let dim = f.dim();
    Ok(match f {
        ProxFunction::Quadratic { p, b } => {
            let m = linalg::matrix_from_rows(p)?;
            let sym = (&m + m.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let vecs = eig.eigenvectors;
            let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
            let b = DVector::from_column_slice(b);
            ResolventOperator::new(dim, move |gamma, x| {
                let rhs = DVector::from_column_slice(x) - &b * gamma;
                let mut coeff = vecs.tr_mul(&rhs);
                for (c, l) in coeff.iter_mut().zip(&vals) {
                    *c /= 1.0 + gamma * l;
                }
                (&vecs * coeff).as_slice().to_vec()
            })
        }
        ProxFunction::Separable { parts } => {
            let resolvents = parts
                .iter()
                .map(|p| Ok((p.dim(), prox_factory(p)?)))
                .collect::<Result<Vec<_>>>()?;
            ResolventOperator::new(dim, move |gamma, x| {
                let mut out = Vec::with_capacity(x.len());
                let mut offset = 0;
                for (d, r) in &resolvents {
                    out.extend(r.eval(gamma, &x[offset..offset + d]));
                    offset += d;
                }
                out
            })
        }
        _ => {
            let f = f.clone();
            ResolventOperator::new(dim, move |gamma, x| f.prox_unchecked(gamma, x))
        }
    })
}

/// Resolvent of `∂f*` from the resolvent of `∂f`, by Moreau's decomposition:
/// `prox_{γf*}(x) = x − γ prox_{f/γ}(x/γ)`.
pub fn conjugate_prox(base: &ResolventOperator) -> ResolventOperator {
    let base = base.clone();
    ResolventOperator::new(base.dim(), move |gamma, x| {
        let scaled: Vec<f64> = x.iter().map(|t| t / gamma).collect();
        let inner = base.eval(1.0 / gamma, &scaled);
        x.iter().zip(inner).map(|(t, p)| t - gamma * p).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(p: &[&[f64]], b: &[f64]) -> ProxFunction {
        ProxFunction::Quadratic { p: p.iter().map(|r| r.to_vec()).collect(), b: b.to_vec() }
    }

    #[test]
    fn prox_examples() {
        let zero = prox_factory(&ProxFunction::Zero { dim: 2 }).unwrap();
        assert_eq!(zero.resolvent(0.7, &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);

        let abs = prox_factory(&ProxFunction::L1 { dim: 1, weight: 1.0 }).unwrap();
        assert_eq!(abs.resolvent(0.5, &[2.0]).unwrap(), vec![1.5]);

        let interval = prox_factory(&ProxFunction::Box { lower: vec![0.0], upper: vec![1.0] }).unwrap();
        for g in [0.1, 1.0, 10.0] {
            assert_eq!(interval.resolvent(g, &[2.0]).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn conjugate_examples() {
        let zero_conj = conjugate_prox(&prox_factory(&ProxFunction::Zero { dim: 2 }).unwrap());
        assert_eq!(zero_conj.resolvent(0.3, &[4.0, -1.0]).unwrap(), vec![0.0, 0.0]);

        let abs = prox_factory(&ProxFunction::L1 { dim: 1, weight: 1.0 }).unwrap();
        let abs_conj = conjugate_prox(&abs);
        assert_eq!(abs_conj.resolvent(1.0, &[3.0]).unwrap(), vec![1.0]);

        // Even f: prox_{γf}(0) + γ prox_{f*/γ}(0) = 0.
        for g in [0.2, 1.0, 3.0] {
            let p = abs.resolvent(g, &[0.0]).unwrap()[0];
            let q = abs_conj.resolvent(1.0 / g, &[0.0]).unwrap()[0];
            assert_eq!(p + g * q, 0.0);
        }
    }

    #[test]
    fn quadratic_routes_agree() {
        let f = quad(&[&[2.0, 1.0], &[1.0, 3.0]], &[0.5, -1.0]);
        let cached = prox_factory(&f).unwrap();
        for g in [0.01, 0.5, 4.0] {
            let x = [1.2, -0.7];
            let a = f.prox(g, &x).unwrap();
            let b = cached.resolvent(g, &x).unwrap();
            assert!(linalg::dist(&a, &b) < 1e-12);
            // optimality: (y - x)/γ + P y + b = 0
            let grad = f.subgradient(&a);
            let r: Vec<f64> = a.iter().zip(&x).zip(&grad).map(|((y, t), g2)| (y - t) / g + g2).collect();
            assert!(linalg::norm(&r) < 1e-10);
        }
    }

    #[test]
    fn invalid_families_are_rejected() {
        assert!(matches!(
            prox_factory(&quad(&[&[1.0, 0.0], &[0.0, -0.5]], &[0.0, 0.0])),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        assert!(prox_factory(&quad(&[&[1.0, 2.0], &[0.0, 1.0]], &[0.0, 0.0])).is_err());
        assert!(prox_factory(&ProxFunction::Box { lower: vec![1.0], upper: vec![0.0] }).is_err());
        assert!(prox_factory(&ProxFunction::L1 { dim: 1, weight: -1.0 }).is_err());
        assert!(prox_factory(&ProxFunction::L2Ball { center: vec![0.0], radius: -1.0 }).is_err());
        assert!(prox_factory(&ProxFunction::Separable { parts: vec![] }).is_err());
    }

    #[test]
    fn separable_prox_splits_coordinates() {
        let f = ProxFunction::Separable {
            parts: vec![
                ProxFunction::L1 { dim: 1, weight: 1.0 },
                ProxFunction::Box { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0] },
            ],
        };
        let r = prox_factory(&f).unwrap();
        assert_eq!(r.resolvent(0.5, &[2.0, -1.0, 0.5]).unwrap(), vec![1.5, 0.0, 0.5]);
        assert_eq!(f.value(&[2.0, 0.5, 0.5]), 2.0);
        assert!(f.value(&[2.0, 1.5, 0.5]).is_infinite());
    }

    #[test]
    fn ball_projection() {
        let f = ProxFunction::L2Ball { center: vec![1.0, 1.0], radius: 1.0 };
        let y = f.prox(1.0, &[4.0, 5.0]).unwrap();
        assert!((linalg::dist(&y, &[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(f.value(&y), 0.0);
    }

    #[test]
    fn conjugate_values() {
        assert_eq!(ProxFunction::L1 { dim: 2, weight: 1.0 }.conjugate_value(&[0.5, -1.0]), Some(0.0));
        assert_eq!(
            ProxFunction::L1 { dim: 1, weight: 1.0 }.conjugate_value(&[1.5]),
            Some(f64::INFINITY)
        );
        // (w/2)|x-a|^2 with w=2, a=1: f*(u) = u^2/4 + u
        assert_eq!(ProxFunction::SqDist { point: vec![1.0], weight: 2.0 }.conjugate_value(&[2.0]), Some(3.0));
        assert_eq!(
            ProxFunction::Box { lower: vec![-1.0, 0.0], upper: vec![2.0, 3.0] }.conjugate_value(&[1.0, -1.0]),
            Some(2.0)
        );
        let q = quad(&[&[2.0]], &[1.0]).conjugate_value(&[3.0]).unwrap();
        assert!((q - 1.0).abs() < 1e-15);
        assert_eq!(quad(&[&[0.0]], &[0.0]).conjugate_value(&[3.0]), None);
    }
}
