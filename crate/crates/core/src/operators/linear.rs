use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CallCounter;
use crate::error::{Error, Result};
use crate::linalg;

/// Factor applied to power-iteration estimates before they enter step-size
/// bounds.
pub const NORM_SAFETY_FACTOR: f64 = 1.01;

trait LinearOp: Send + Sync {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, u: &[f64]) -> Vec<f64>;
}

struct Dense(DMatrix<f64>);

impl LinearOp for Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.0, x)
    }
    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        linalg::matvec_transpose(&self.0, u)
    }
}

struct Diagonal(Vec<f64>);

impl LinearOp for Diagonal {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.0).map(|(a, d)| a * d).collect()
    }
    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.apply(u)
    }
}

struct Zero {
    rows: usize,
    cols: usize,
}

impl LinearOp for Zero {
    fn apply(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.rows]
    }
    fn adjoint(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.cols]
    }
}

/// `(Dx)_j = x_{j+1} − x_j`, mapping `R^n → R^{n−1}`.
struct ForwardDifference(usize);

impl LinearOp for ForwardDifference {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.windows(2).map(|w| w[1] - w[0]).collect()
    }
    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let n = self.0;
        (0..n)
            .map(|k| {
                let incoming = if k > 0 { u[k - 1] } else { 0.0 };
                let outgoing = if k + 1 < n { u[k] } else { 0.0 };
                incoming - outgoing
            })
            .collect()
    }
}

struct Composition {
    outer: LinearMap,
    inner: LinearMap,
}

impl LinearOp for Composition {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.outer.apply(&self.inner.apply(x))
    }
    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.inner.adjoint(&self.outer.adjoint(u))
    }
}

struct Counted {
    inner: Arc<dyn LinearOp>,
    applies: CallCounter,
    adjoints: CallCounter,
}

impl LinearOp for Counted {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.applies.bump();
        self.inner.apply(x)
    }
    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.adjoints.bump();
        self.inner.adjoint(u)
    }
}

/// Bounded linear map `L: H → G` together with its adjoint and an optional
/// upper bound on `‖L‖`.
#[derive(Clone)]
pub struct LinearMap {
    in_dim: usize,
    out_dim: usize,
    norm_bound: Option<f64>,
    op: Arc<dyn LinearOp>,
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearMap")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("norm_bound", &self.norm_bound)
            .finish_non_exhaustive()
    }
}

impl LinearMap {
    /// Dense matrix; the norm is left unset and must be estimated or declared.
    pub fn dense(m: DMatrix<f64>) -> Self {
        Self { in_dim: m.ncols(), out_dim: m.nrows(), norm_bound: None, op: Arc::new(Dense(m)) }
    }

    /// Dense matrix with its exact spectral norm (via SVD).
    pub fn dense_exact_norm(m: DMatrix<f64>) -> Self {
        let n = linalg::spectral_norm(&m);
        Self::dense(m).with_norm_bound(n)
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        let n = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        Self { in_dim: d.len(), out_dim: d.len(), norm_bound: Some(n), op: Arc::new(Diagonal(d)) }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(vec![1.0; dim])
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self::diagonal(vec![s; dim])
    }

    pub fn zero(out_dim: usize, in_dim: usize) -> Self {
        Self { in_dim, out_dim, norm_bound: Some(0.0), op: Arc::new(Zero { rows: out_dim, cols: in_dim }) }
    }

    /// Forward difference `R^n → R^{n−1}` with its exact norm `2 cos(π/(2n))`.
    pub fn forward_difference(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Shape("forward difference needs n >= 2".into()));
        }
        let norm = 2.0 * (std::f64::consts::PI / (2.0 * n as f64)).cos();
        Ok(Self { in_dim: n, out_dim: n - 1, norm_bound: Some(norm), op: Arc::new(ForwardDifference(n)) })
    }

    /// `outer ∘ inner`; the norm bound is the product of the factors' bounds
    /// when both are known.
    pub fn compose(outer: &LinearMap, inner: &LinearMap) -> Result<Self> {
        if outer.in_dim != inner.out_dim {
            return Err(Error::Shape(format!(
                "cannot compose: outer takes {}, inner yields {}",
                outer.in_dim, inner.out_dim
            )));
        }
        let norm_bound = match (outer.norm_bound, inner.norm_bound) {
            (Some(a), Some(b)) => Some(a * b),
            _ => None,
        };
        Ok(Self {
            in_dim: inner.in_dim,
            out_dim: outer.out_dim,
            norm_bound,
            op: Arc::new(Composition { outer: outer.clone(), inner: inner.clone() }),
        })
    }

    pub fn with_norm_bound(mut self, bound: f64) -> Self {
        self.norm_bound = Some(bound);
        self
    }

    /// Replaces a missing norm bound by a power-iteration estimate inflated
    /// by [`NORM_SAFETY_FACTOR`]. Existing bounds are kept.
    pub fn with_estimated_norm(self, seed: u64) -> Self {
        if self.norm_bound.is_some() {
            return self;
        }
        let est = estimate_operator_norm(&self, 1e-10, 10_000, seed);
        self.with_norm_bound(est.value * NORM_SAFETY_FACTOR)
    }

    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.op.apply(x)
    }

    pub fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.op.adjoint(u)
    }

    /// True when `L e_j = 0` for every basis vector, i.e. `L` is the zero map.
    pub fn is_zero_map(&self) -> bool {
        if self.norm_bound == Some(0.0) {
            return true;
        }
        let mut e = vec![0.0; self.in_dim];
        for j in 0..self.in_dim {
            e[j] = 1.0;
            if self.apply(&e).iter().any(|&v| v != 0.0) {
                return false;
            }
            e[j] = 0.0;
        }
        true
    }

    /// Same map with counters on `apply` and `adjoint`.
    pub fn instrumented(&self) -> (Self, CallCounter, CallCounter) {
        let applies = CallCounter::default();
        let adjoints = CallCounter::default();
        let op = Counted { inner: self.op.clone(), applies: applies.clone(), adjoints: adjoints.clone() };
        (Self { op: Arc::new(op), ..self.clone() }, applies, adjoints)
    }
}

/// Result of [`estimate_operator_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    /// Raw estimate of `‖L‖` (not inflated).
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration on `L*L` from a seeded random start. Stops when the
/// relative change of the Rayleigh-quotient estimate falls below `tol`; if
/// `max_iter` runs out first, the last estimate is returned with
/// `converged = false`.
pub fn estimate_operator_norm(l: &LinearMap, tol: f64, max_iter: usize, seed: u64) -> NormEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..l.in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nv = linalg::norm(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= nv);
    }

    let mut estimate = 0.0;
    for it in 1..=max_iter {
        let lv = l.apply(&v);
        // Rayleigh quotient of L*L at the unit vector v.
        let current = linalg::norm(&lv);
        let w = l.adjoint(&lv);
        let nw = linalg::norm(&w);
        if nw == 0.0 {
            return NormEstimate { value: current, converged: true, iterations: it };
        }
        let change = (current - estimate).abs();
        estimate = current;
        if it > 1 && change <= tol * current {
            return NormEstimate { value: current, converged: true, iterations: it };
        }
        v = linalg::scale(1.0 / nw, &w);
    }
    NormEstimate { value: estimate, converged: false, iterations: max_iter }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
    }

    fn adjoint_gap(l: &LinearMap, rng: &mut ChaCha8Rng) -> f64 {
        let x = random_vec(rng, l.in_dim());
        let u = random_vec(rng, l.out_dim());
        (linalg::dot(&l.apply(&x), &u) - linalg::dot(&x, &l.adjoint(&u))).abs()
    }

    #[test]
    fn adjoint_identity_for_every_constructor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dense = LinearMap::dense(DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * 0.5 - j as f64));
        let diff = LinearMap::forward_difference(5).unwrap();
        let maps = vec![
            dense.clone(),
            LinearMap::diagonal(vec![2.0, -1.0, 0.5]),
            LinearMap::identity(3),
            LinearMap::zero(2, 3),
            diff.clone(),
            LinearMap::compose(&dense, &LinearMap::diagonal(vec![1.0, 2.0, 3.0, 4.0])).unwrap(),
            LinearMap::compose(&LinearMap::identity(4), &diff).unwrap(),
        ];
        for l in &maps {
            for _ in 0..200 {
                assert!(adjoint_gap(l, &mut rng) <= 1e-10);
            }
        }
    }

    #[test]
    fn norm_examples() {
        let est = estimate_operator_norm(&LinearMap::diagonal(vec![2.0, 1.0]), 1e-12, 1000, 0);
        assert!((est.value - 2.0).abs() < 1e-9);
        assert!(est.converged);

        let est = estimate_operator_norm(&LinearMap::zero(2, 2), 1e-12, 1000, 0);
        assert_eq!(est.value, 0.0);

        // Oracle: L^T L = [[1,1],[1,2]] has largest eigenvalue
        // (tr + sqrt(tr^2 - 4 det)) / 2 with tr = 3, det = 1.
        let (tr, det) = (3.0f64, 1.0f64);
        let expected = ((tr + (tr * tr - 4.0 * det).sqrt()) / 2.0).sqrt();
        let l = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        let est = estimate_operator_norm(&l, 1e-12, 1000, 3);
        assert!((est.value - expected).abs() <= 1e-10 * expected);
        assert!((expected - 1.618_033_988_749_895).abs() < 1e-12);
    }

    #[test]
    fn unconverged_estimate_is_flagged() {
        let l = LinearMap::dense(DMatrix::from_fn(6, 6, |i, j| 1.0 / (1.0 + i as f64 + j as f64)));
        let est = estimate_operator_norm(&l, 0.0, 3, 1);
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
        assert!(est.value > 0.0);
    }

    #[test]
    fn forward_difference_norm_matches_svd() {
        for n in [2usize, 3, 7, 10] {
            let d = LinearMap::forward_difference(n).unwrap();
            let m = DMatrix::from_fn(n - 1, n, |i, j| {
                if j == i + 1 {
                    1.0
                } else if j == i {
                    -1.0
                } else {
                    0.0
                }
            });
            assert!((d.norm_bound().unwrap() - linalg::spectral_norm(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn estimated_bound_is_inflated() {
        let l = LinearMap::dense(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).with_estimated_norm(0);
        let bound = l.norm_bound().unwrap();
        assert!(bound >= 5.0 && (bound - 5.0 * NORM_SAFETY_FACTOR).abs() < 1e-8);
    }

    #[test]
    fn zero_map_detection() {
        assert!(LinearMap::dense(DMatrix::zeros(2, 3)).is_zero_map());
        assert!(!LinearMap::dense(DMatrix::from_row_slice(1, 2, &[0.0, 1e-3])).is_zero_map());
    }
}
