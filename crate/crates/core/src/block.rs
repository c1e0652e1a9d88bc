//! Block-structured containers for the per-lower-problem variables.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Result};

/// One dense vector per lower-level block; block dimensions may differ.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    blocks: Vec<DVector<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| DVector::zeros(d)).collect(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.blocks[i]
    }

    pub fn set_block(&mut self, i: usize, value: DVector<f64>) {
        debug_assert_eq!(self.blocks[i].len(), value.len());
        self.blocks[i] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.blocks.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut DVector<f64>> {
        self.blocks.iter_mut()
    }

    pub fn into_blocks(self) -> Vec<DVector<f64>> {
        self.blocks
    }

    /// `self += a * other`, blockwise.
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return shape_err(format!(
                "block vector shapes {:?} and {:?} differ",
                self.dims(),
                other.dims()
            ));
        }
        for (s, o) in self.blocks.iter_mut().zip(&other.blocks) {
            s.axpy(a, o, 1.0);
        }
        Ok(())
    }

    /// Sum of squared Euclidean norms of all blocks.
    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    /// `Σ_i ‖self_i − other_i‖²`.
    pub fn distance_squared(&self, other: &Self) -> Result<f64> {
        if !self.same_shape(other) {
            return shape_err("block vector shapes differ");
        }
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum())
    }
}

impl std::ops::Index<usize> for BlockVector {
    type Output = DVector<f64>;
    fn index(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }
}

/// One dense symmetric matrix per block. Inputs are symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    blocks: Vec<DMatrix<f64>>,
}

/// `(X + Xᵀ)/2`, with the two triangles made bitwise equal.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = x.clone();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (x[(r, c)] + x[(c, r)]);
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
    out
}

impl BlockMatrix {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            if !b.is_square() {
                return shape_err(format!(
                    "block {i} is {}x{}, expected square",
                    b.nrows(),
                    b.ncols()
                ));
            }
        }
        Ok(Self {
            blocks: blocks.iter().map(symmetrize).collect(),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    /// Replaces block `i`; the new value is symmetrized.
    pub fn set_block(&mut self, i: usize, value: DMatrix<f64>) -> Result<()> {
        if value.shape() != self.blocks[i].shape() {
            return shape_err(format!(
                "block {i}: got {:?}, expected {:?}",
                value.shape(),
                self.blocks[i].shape()
            ));
        }
        self.blocks[i] = symmetrize(&value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.blocks.iter()
    }
}
