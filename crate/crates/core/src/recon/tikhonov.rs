use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{ConductivityStack, MeasurementFrameSet, SensitivityMatrix};
use crate::scalar::Real;

/// Solves `(JᵀJ + λI) σ = JᵀV` column by column, reusing `JᵀJ` across `λ`.
#[derive(Debug, Clone)]
pub struct TikhonovSolver<T> {
    gram: Matrix<T>,
    rhs: Matrix<T>,
    grid: crate::model::PixelGrid,
}

impl<T: Real> TikhonovSolver<T> {
    pub fn new(j: &SensitivityMatrix<T>, v: &MeasurementFrameSet<T>) -> Result<Self> {
        if v.measurement_count() != j.measurement_count() {
            return Err(Error::shape(
                "tikhonov measurements",
                j.measurement_count(),
                v.measurement_count(),
            ));
        }
        Ok(Self {
            gram: j.matrix().tr_matmul(j.matrix())?,
            rhs: j.matrix().tr_matmul(v.values())?,
            grid: j.projection().grid().clone(),
        })
    }

    /// Mean diagonal of `JᵀJ`, a natural scale for `λ`.
    pub fn gram_scale(&self) -> T {
        let n = self.gram.rows();
        (0..n).map(|i| self.gram.get(i, i)).sum::<T>() / T::lit(n as f64)
    }

    pub fn solve(&self, lambda: T) -> Result<ConductivityStack<T>> {
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
        }
        let n = self.gram.rows();
        let mut a = self.gram.clone();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + lambda);
        }
        let chol = Cholesky::factor(&a)?;
        let mut out = Matrix::zeros(n, self.rhs.cols());
        for c in 0..self.rhs.cols() {
            out.set_column(c, &chol.solve(&self.rhs.column(c)));
        }
        ConductivityStack::new(self.grid.clone(), out)
    }
}

/// Regularized least-squares reconstruction of every frame.
pub fn run_tikhonov_baseline<T: Real>(
    j: &SensitivityMatrix<T>,
    v: &MeasurementFrameSet<T>,
    lambda: T,
) -> Result<ConductivityStack<T>> {
    TikhonovSolver::new(j, v)?.solve(lambda)
}

/// `λ = s · 10^k` for `k` in `lo..=hi`, where `s` is the mean diagonal of
/// `JᵀJ`.
pub fn tikhonov_lambda_grid<T: Real>(solver: &TikhonovSolver<T>, lo: i32, hi: i32) -> Vec<T> {
    let s = solver.gram_scale();
    (lo..=hi).map(|k| s * T::lit(10f64.powi(k))).collect()
}
