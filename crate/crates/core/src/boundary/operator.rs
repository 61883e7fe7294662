//! Dense boundary operators with quadrature-weighted inner products.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    /// Measurements on (0,T).
    T,
    /// Measurements on (0,2T).
    TwoT,
    /// Maps between coefficient spaces (no time horizon of its own).
    Coefficients,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryOperator {
    pub matrix: DenseMatrix,
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub horizon: Horizon,
}

impl BoundaryOperator {
    pub fn new(matrix: DenseMatrix, w_in: Vec<f64>, w_out: Vec<f64>, horizon: Horizon) -> Result<Self> {
        if w_in.len() != matrix.cols || w_out.len() != matrix.rows {
            return Err(Error::Shape(format!(
                "{}x{} matrix with {} input and {} output weights",
                matrix.rows,
                matrix.cols,
                w_in.len(),
                w_out.len()
            )));
        }
        Ok(BoundaryOperator { matrix, w_in, w_out, horizon })
    }

    pub fn identity(weights: Vec<f64>) -> Self {
        let n = weights.len();
        BoundaryOperator {
            matrix: DenseMatrix::identity(n),
            w_in: weights.clone(),
            w_out: weights,
            horizon: Horizon::Coefficients,
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols
    }

    /// `A* = W_in⁻¹ Aᵀ W_out`, so that `⟨A f, h⟩_out = ⟨f, A* h⟩_in`.
    pub fn adjoint(&self) -> Result<Self> {
        if let Some(i) = self.w_in.iter().chain(&self.w_out).position(|w| !(*w > 0.0)) {
            return Err(Error::Config(format!("quadrature weight {i} is not positive")));
        }
        let mut m = self.matrix.transpose();
        m.scale_cols(&self.w_out);
        let inv: Vec<f64> = self.w_in.iter().map(|w| 1.0 / w).collect();
        m.scale_rows(&inv);
        Ok(BoundaryOperator {
            matrix: m,
            w_in: self.w_out.clone(),
            w_out: self.w_in.clone(),
            horizon: self.horizon,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let (a, b) = (self.apply(&re), self.apply(&im));
        a.into_iter().zip(b).map(|(r, i)| Complex64::new(r, i)).collect()
    }

    pub fn inner_in(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted(&self.w_in, a, b)
    }

    pub fn inner_out(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted(&self.w_out, a, b)
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &BoundaryOperator) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(Error::Shape(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(BoundaryOperator {
            matrix: self.matrix.matmul(&other.matrix),
            w_in: other.w_in.clone(),
            w_out: self.w_out.clone(),
            horizon: self.horizon,
        })
    }

    pub fn sub(&self, other: &BoundaryOperator) -> Result<Self> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(Error::Shape("operator shapes differ".into()));
        }
        Ok(BoundaryOperator { matrix: self.matrix.sub(&other.matrix), ..self.clone() })
    }
}

fn weighted(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}
