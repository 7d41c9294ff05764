//! Elements of the direct sum `K = H ⊕ G_1 ⊕ … ⊕ G_m` and its Euclidean
//! geometry. Blocks are stored as separate contiguous vectors; use
//! [`BlockVector::flatten`] / [`BlockVector::from_flat`] to move to a single
//! coordinate vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Dimensions of the primal space and of each dual space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceShape {
    dim_primal: usize,
    dims_dual: Vec<usize>,
}

impl SpaceShape {
    pub fn new(dim_primal: usize, dims_dual: Vec<usize>) -> Result<Self> {
        if dims_dual.is_empty() {
            return Err(Error::Shape("at least one dual block is required (m >= 1)".into()));
        }
        if dim_primal == 0 || dims_dual.contains(&0) {
            return Err(Error::Shape("all block dimensions must be >= 1".into()));
        }
        Ok(Self { dim_primal, dims_dual })
    }

    pub fn dim_primal(&self) -> usize {
        self.dim_primal
    }

    pub fn dims_dual(&self) -> &[usize] {
        &self.dims_dual
    }

    /// Number of dual blocks `m`.
    pub fn m(&self) -> usize {
        self.dims_dual.len()
    }

    /// Dimension of block `k`, where `k = 0` is the primal block.
    pub fn block_dim(&self, k: usize) -> usize {
        if k == 0 {
            self.dim_primal
        } else {
            self.dims_dual[k - 1]
        }
    }

    pub fn total_dim(&self) -> usize {
        self.dim_primal + self.dims_dual.iter().sum::<usize>()
    }
}

/// A point `(x, v_1, …, v_m)` of the product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    primal: Vec<f64>,
    duals: Vec<Vec<f64>>,
}

impl BlockVector {
    /// Builds a block vector, rejecting empty blocks and non-finite entries.
    pub fn new(primal: Vec<f64>, duals: Vec<Vec<f64>>) -> Result<Self> {
        SpaceShape::new(primal.len(), duals.iter().map(Vec::len).collect())?;
        let v = Self { primal, duals };
        if !v.is_finite() {
            return Err(Error::NonFinite("block vector entries".into()));
        }
        Ok(v)
    }

    /// Skips validation. Used inside the iteration, where non-finite values
    /// must be representable so divergence can be reported.
    pub(crate) fn from_parts(primal: Vec<f64>, duals: Vec<Vec<f64>>) -> Self {
        Self { primal, duals }
    }

    pub fn zeros(shape: &SpaceShape) -> Self {
        Self {
            primal: vec![0.0; shape.dim_primal],
            duals: shape.dims_dual.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn shape(&self) -> SpaceShape {
        SpaceShape {
            dim_primal: self.primal.len(),
            dims_dual: self.duals.iter().map(Vec::len).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.duals.len()
    }

    pub fn primal(&self) -> &[f64] {
        &self.primal
    }

    /// Dual block `i` in `0..m` (zero-based).
    pub fn dual(&self, i: usize) -> &[f64] {
        &self.duals[i]
    }

    pub fn duals(&self) -> &[Vec<f64>] {
        &self.duals
    }

    /// Block `k` with `k = 0` the primal block and `k = i + 1` dual block `i`.
    pub fn block(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.primal
        } else {
            &self.duals[k - 1]
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (self.primal, self.duals)
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.primal) && self.duals.iter().all(|d| linalg::all_finite(d))
    }

    /// Concatenation `[x, v_1, …, v_m]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.primal.len() + self.duals.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(&self.primal);
        for d in &self.duals {
            out.extend_from_slice(d);
        }
        out
    }

    pub fn from_flat(shape: &SpaceShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != shape.total_dim() {
            return Err(Error::Shape(format!(
                "flat vector has length {}, shape needs {}",
                flat.len(),
                shape.total_dim()
            )));
        }
        Ok(Self::from_flat_unchecked(shape, flat))
    }

    pub(crate) fn from_flat_unchecked(shape: &SpaceShape, flat: &[f64]) -> Self {
        let (primal, mut rest) = flat.split_at(shape.dim_primal);
        let mut duals = Vec::with_capacity(shape.m());
        for &d in &shape.dims_dual {
            let (head, tail) = rest.split_at(d);
            duals.push(head.to_vec());
            rest = tail;
        }
        Self { primal: primal.to_vec(), duals }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        let same = self.primal.len() == other.primal.len()
            && self.duals.len() == other.duals.len()
            && self.duals.iter().zip(&other.duals).all(|(a, b)| a.len() == b.len());
        if same {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "block shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// `⟨x, x'⟩ + Σ_i ⟨v_i, v_i'⟩`
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.dot_unchecked(other))
    }

    pub(crate) fn dot_unchecked(&self, other: &Self) -> f64 {
        self.duals
            .iter()
            .zip(&other.duals)
            .fold(linalg::dot(&self.primal, &other.primal), |acc, (a, b)| acc + linalg::dot(a, b))
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot_unchecked(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Blockwise `alpha * u + beta * v`.
    pub fn combine(alpha: f64, u: &Self, beta: f64, v: &Self) -> Result<Self> {
        u.check_same_shape(v)?;
        Ok(Self::combine_unchecked(alpha, u, beta, v))
    }

    pub(crate) fn combine_unchecked(alpha: f64, u: &Self, beta: f64, v: &Self) -> Self {
        Self {
            primal: linalg::lincomb(alpha, &u.primal, beta, &v.primal),
            duals: u
                .duals
                .iter()
                .zip(&v.duals)
                .map(|(a, b)| linalg::lincomb(alpha, a, beta, b))
                .collect(),
        }
    }

    /// Block-norm distance `‖u − v‖`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(Self::combine_unchecked(1.0, self, -1.0, other).norm())
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub fn block_dot(u: &BlockVector, v: &BlockVector) -> Result<f64> {
    u.dot(v)
}

pub fn block_norm(u: &BlockVector) -> f64 {
    u.norm()
}

pub fn block_combine(alpha: f64, u: &BlockVector, beta: f64, v: &BlockVector) -> Result<BlockVector> {
    BlockVector::combine(alpha, u, beta, v)
}
