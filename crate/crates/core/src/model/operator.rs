use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::projection::{flatten_frames, ProjectionMap};
use crate::model::stack::GridStack;
use crate::scalar::Real;

/// Normalized sensitivity matrix `J` (`M x N`) together with the projection
/// that ties its columns to grid slots.
#[derive(Debug)]
pub struct SensitivityMatrix<T> {
    matrix: Matrix<T>,
    projection: ProjectionMap,
    lifted: OnceLock<Matrix<T>>,
}

impl<T: Real> Clone for SensitivityMatrix<T> {
    fn clone(&self) -> Self {
        Self {
            matrix: self.matrix.clone(),
            projection: self.projection.clone(),
            lifted: OnceLock::new(),
        }
    }
}

impl<T: Real> SensitivityMatrix<T> {
    pub fn new(matrix: Matrix<T>, projection: ProjectionMap) -> Result<Self> {
        let n = projection.grid().pixel_count();
        if matrix.cols() != n {
            return Err(Error::shape("SensitivityMatrix::new", n, matrix.cols()));
        }
        Ok(Self {
            matrix,
            projection,
            lifted: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn projection(&self) -> &ProjectionMap {
        &self.projection
    }

    pub fn measurement_count(&self) -> usize {
        self.matrix.rows()
    }

    pub fn pixel_count(&self) -> usize {
        self.matrix.cols()
    }

    /// `J̃ = J Pᵀ` (`M x H·W`), built on first use. Columns at void slots are
    /// zero.
    pub fn lifted(&self) -> &Matrix<T> {
        self.lifted.get_or_init(|| {
            let grid = self.projection.grid();
            let mut out = Matrix::zeros(self.matrix.rows(), grid.slot_count());
            for m in 0..self.matrix.rows() {
                let src = self.matrix.row(m);
                let dst = out.row_mut(m);
                for (k, &slot) in grid.slots().iter().enumerate() {
                    dst[slot] = src[k];
                }
            }
            out
        })
    }
}

/// `V = J Σ`.
pub fn forward<T: Real>(j: &SensitivityMatrix<T>, sigma: &Matrix<T>) -> Result<Matrix<T>> {
    if sigma.rows() != j.pixel_count() {
        return Err(Error::shape("forward", j.pixel_count(), sigma.rows()));
    }
    j.matrix.matmul(sigma)
}

/// `V = J̃ R_v(G)` on the full grid stack.
pub fn forward_modified<T: Real>(j: &SensitivityMatrix<T>, stack: &GridStack<T>) -> Result<Matrix<T>> {
    let grid = j.projection.grid();
    if (stack.height(), stack.width()) != (grid.height(), grid.width()) {
        return Err(Error::shape(
            "forward_modified",
            (grid.height(), grid.width()),
            (stack.height(), stack.width()),
        ));
    }
    j.lifted().matmul(&flatten_frames(stack))
}
