use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::grid::PixelGrid;
use crate::model::stack::GridStack;
use crate::scalar::Real;

/// Selection operator `P` of shape `(H·W) x N` embedding in-mask pixel
/// vectors into the full grid.
///
/// Never stored densely: column `k` has its single one at the grid slot of
/// pixel `k`, so applying `P` is a scatter and `Pᵀ` a gather.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionMap {
    grid: PixelGrid,
}

impl ProjectionMap {
    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    /// `(H·W, N)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.grid.slot_count(), self.grid.pixel_count())
    }

    /// Entry `P[row, col]`, either 0 or 1.
    pub fn entry(&self, row: usize, col: usize) -> u8 {
        u8::from(self.grid.slots()[col] == row)
    }

    /// `P x` for a length-`N` vector.
    pub fn scatter<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.grid.slot_count()];
        for (&slot, &v) in self.grid.slots().iter().zip(x) {
            out[slot] = v;
        }
        out
    }

    /// `Pᵀ y` for a length-`H·W` vector.
    pub fn gather<T: Real>(&self, y: &[T]) -> Vec<T> {
        self.grid.slots().iter().map(|&slot| y[slot]).collect()
    }
}

pub fn build_projection(grid: &PixelGrid) -> ProjectionMap {
    ProjectionMap { grid: grid.clone() }
}

/// Scatters the `N x L` vector form into an `L x H x W` grid stack, zero at
/// void pixels.
pub fn embed<T: Real>(sigma: &Matrix<T>, proj: &ProjectionMap) -> Result<GridStack<T>> {
    let grid = proj.grid();
    if sigma.rows() != grid.pixel_count() {
        return Err(Error::shape("embed", grid.pixel_count(), sigma.rows()));
    }
    let frames = sigma.cols();
    let hw = grid.slot_count();
    let mut data = vec![T::zero(); frames * hw];
    for (k, &slot) in grid.slots().iter().enumerate() {
        let row = sigma.row(k);
        for (l, &v) in row.iter().enumerate() {
            data[l * hw + slot] = v;
        }
    }
    GridStack::from_vec(frames, grid.height(), grid.width(), data)
}

/// Gathers the in-mask pixels of every frame into the `N x L` vector form.
pub fn extract<T: Real>(stack: &GridStack<T>, proj: &ProjectionMap) -> Result<Matrix<T>> {
    let grid = proj.grid();
    if (stack.height(), stack.width()) != (grid.height(), grid.width()) {
        return Err(Error::shape(
            "extract",
            (grid.height(), grid.width()),
            (stack.height(), stack.width()),
        ));
    }
    let hw = grid.slot_count();
    let frames = stack.frames();
    let data = stack.as_slice();
    Ok(Matrix::from_fn(grid.pixel_count(), frames, |k, l| {
        data[l * hw + grid.slots()[k]]
    }))
}

/// Pure reshape `L x H x W -> (H·W) x L` (every slot, void or not).
pub fn flatten_frames<T: Real>(stack: &GridStack<T>) -> Matrix<T> {
    let hw = stack.height() * stack.width();
    let data = stack.as_slice();
    Matrix::from_fn(hw, stack.frames(), |p, l| data[l * hw + p])
}
