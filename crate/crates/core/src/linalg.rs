//! Dense row-major matrices and the few factorizations the toolkit needs.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `selfᵀ x`
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi != 0.0 {
                for (yj, a) in y.iter_mut().zip(self.row(i)) {
                    *yj += a * xi;
                }
            }
        }
        y
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let c = self.to_faer() * other.to_faer();
        Self::from_faer(&c)
    }

    pub fn scale_rows(&mut self, s: &[f64]) {
        for i in 0..self.rows {
            let si = s[i];
            for v in &mut self.data[i * self.cols..(i + 1) * self.cols] {
                *v *= si;
            }
        }
    }

    pub fn scale_cols(&mut self, s: &[f64]) {
        for i in 0..self.rows {
            for (v, sj) in self.data[i * self.cols..(i + 1) * self.cols].iter_mut().zip(s) {
                *v *= sj;
            }
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral norm through the eigenvalues of `AᵀA` (small matrices only).
    pub fn spectral_norm(&self) -> Result<f64> {
        let ata = self.transpose().matmul(self);
        let ev = sym_eigenvalues(&ata)?;
        Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
    }

    pub fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub fn from_faer(m: &Mat<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Eigen-decomposition of a symmetric matrix, values ascending.
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `k` of this matrix is the eigenvector for `values[k]`.
    pub vectors: DenseMatrix,
}

pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    check_square(a)?;
    let e = a
        .to_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    Ok(SymEigen {
        values: (0..a.rows).map(|i| s[i]).collect(),
        vectors: DenseMatrix::from_fn(a.rows, a.rows, |i, j| u[(i, j)]),
    })
}

pub fn sym_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_square(a)?;
    a.to_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    check_square(a)?;
    let llt = a
        .to_faer()
        .llt(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Cholesky factorization failed: {e:?}")))?;
    let l = llt.L();
    Ok(DenseMatrix::from_fn(a.rows, a.rows, |i, j| if j <= i { l[(i, j)] } else { 0.0 }))
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub fn solve_lower(l: &DenseMatrix, b: &mut [f64]) {
    for i in 0..l.rows {
        let row = l.row(i);
        let s: f64 = row[..i].iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
        b[i] = (b[i] - s) / row[i];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
pub fn solve_lower_t(l: &DenseMatrix, b: &mut [f64]) {
    for i in (0..l.rows).rev() {
        b[i] /= l.get(i, i);
        let xi = b[i];
        for k in 0..i {
            b[k] -= l.get(i, k) * xi;
        }
    }
}

fn check_square(a: &DenseMatrix) -> Result<()> {
    if a.rows != a.cols {
        return Err(Error::Shape(format!("expected a square matrix, got {}x{}", a.rows, a.cols)));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
