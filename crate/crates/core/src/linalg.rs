//! Dense row-major matrices and the two factorizations the crate needs:
//! a dense Cholesky for regularized normal equations and a banded Cholesky
//! for finite-element stiffness systems.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        for (i, &v) in values.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", self.cols, rhs.rows));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        T::gemm(
            self.rows,
            self.cols,
            rhs.cols,
            T::one(),
            &self.data,
            (self.cols, 1),
            &rhs.data,
            (rhs.cols, 1),
            T::zero(),
            &mut out.data,
            (rhs.cols, 1),
        );
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn tr_matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != rhs.rows {
            return Err(Error::shape("tr_matmul", self.rows, rhs.rows));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        T::gemm(
            self.cols,
            self.rows,
            rhs.cols,
            T::one(),
            &self.data,
            (1, self.cols),
            &rhs.data,
            (rhs.cols, 1),
            T::zero(),
            &mut out.data,
            (rhs.cols, 1),
        );
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("sub", self.shape(), rhs.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> Result<T> {
        if self.rows != self.cols {
            return Err(Error::shape("determinant of square matrix", self.rows, self.cols));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).expect("finite"))
                .expect("nonempty");
            if a[p * n + k] == T::zero() {
                return Ok(T::zero());
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                det = -det;
            }
            let piv = a[k * n + k];
            det *= piv;
            for r in k + 1..n {
                let f = a[r * n + k] / piv;
                for c in k..n {
                    let v = a[k * n + c];
                    a[r * n + c] -= f * v;
                }
            }
        }
        Ok(det)
    }
}

/// Dense Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::shape("Cholesky::factor", (n, n), a.shape()));
        }
        let mut l = a.as_slice().to_vec();
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "matrix not positive definite at pivot {j}"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                l[i * n + j] = T::zero();
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        y
    }
}

/// Symmetric banded matrix stored by its lower band, `bandwidth` entries
/// below the diagonal.
#[derive(Debug, Clone)]
pub struct BandedSymmetric<T> {
    n: usize,
    bandwidth: usize,
    // row i holds entries (i, i - bandwidth ..= i)
    band: Vec<T>,
}

impl<T: Real> BandedSymmetric<T> {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            band: vec![T::zero(); n * (bandwidth + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + (self.bandwidth + j - i)
    }

    /// Adds `v` to entry `(i, j)` (and its mirror).
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bandwidth, "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.band[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            T::zero()
        } else {
            self.band[self.slot(i, j)]
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            for j in lo..=i {
                let a = self.band[self.slot(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place banded Cholesky factorization.
    pub fn factor(mut self) -> Result<BandedCholesky<T>> {
        let b = self.bandwidth;
        let w = b + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let jlo = j.saturating_sub(b).max(lo);
                let mut s = self.band[i * w + (b + j - i)];
                for k in jlo..j {
                    s -= self.band[i * w + (b + k - i)] * self.band[j * w + (b + k - j)];
                }
                if j == i {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::Singular(format!(
                            "stiffness matrix not positive definite at row {i}"
                        )));
                    }
                    self.band[i * w + b] = s.sqrt();
                } else {
                    self.band[i * w + (b + j - i)] = s / self.band[j * w + b];
                }
            }
        }
        Ok(BandedCholesky { inner: self })
    }
}

/// Banded Cholesky factor produced by [`BandedSymmetric::factor`].
#[derive(Debug, Clone)]
pub struct BandedCholesky<T> {
    inner: BandedSymmetric<T>,
}

impl<T: Real> BandedCholesky<T> {
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let a = &self.inner;
        let (n, b, w) = (a.n, a.bandwidth, a.bandwidth + 1);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = y[i];
            for k in lo..i {
                s -= a.band[i * w + (b + k - i)] * y[k];
            }
            y[i] = s / a.band[i * w + b];
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= a.band[k * w + (b + i - k)] * y[k];
            }
            y[i] = s / a.band[i * w + b];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        let a = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let mut g = a.tr_matmul(&a).unwrap();
        for i in 0..n {
            let d = g.get(i, i);
            g.set(i, i, d + 1.0);
        }
        g
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = spd(9);
        let x: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let b = a.matmul(&Matrix::from_vec(9, 1, x.clone()).unwrap()).unwrap();
        let sol = Cholesky::factor(&a).unwrap().solve(b.as_slice());
        for (s, t) in sol.iter().zip(&x) {
            assert!((s - t).abs() < 1e-10);
        }
    }

    #[test]
    fn determinant_small_cases() {
        let a = Matrix::from_vec(2, 2, vec![0.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(a.determinant().unwrap(), -6.0);
        assert_eq!(Matrix::<f64>::identity(4).determinant().unwrap(), 1.0);
        let singular = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(singular.determinant().unwrap(), 0.0);
        let l = Cholesky::factor(&spd(5)).unwrap();
        let diag: f64 = (0..5).map(|i| l.lower[i * 5 + i]).product();
        assert!((spd(5).determinant().unwrap() - diag * diag).abs() < 1e-9);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = Matrix::<f64>::identity(3);
        a.set(1, 1, -1.0);
        assert!(matches!(Cholesky::factor(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn banded_matches_dense() {
        let n = 12;
        let bw = 3;
        let mut band = BandedSymmetric::<f64>::zeros(n, bw);
        let mut dense = Matrix::<f64>::zeros(n, n);
        for i in 0..n {
            band.add(i, i, 4.0 + i as f64 * 0.1);
            dense.set(i, i, 4.0 + i as f64 * 0.1);
            for d in 1..=bw {
                if i + d < n {
                    let v = -0.5 / d as f64;
                    band.add(i + d, i, v);
                    dense.set(i + d, i, v);
                    dense.set(i, i + d, v);
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        assert_eq!(band.mul_vec(&rhs).len(), n);
        let x1 = band.factor().unwrap().solve(&rhs);
        let x2 = Cholesky::factor(&dense).unwrap().solve(&rhs);
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_rejects_singular() {
        let mut band = BandedSymmetric::<f64>::zeros(3, 1);
        band.add(0, 0, 1.0);
        band.add(1, 0, 1.0);
        band.add(1, 1, 1.0);
        band.add(2, 2, 1.0);
        assert!(matches!(band.factor(), Err(Error::Singular(_))));
    }
}
