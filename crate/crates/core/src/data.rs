use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Observations `(y_i, x_i)`; column 0 of `x` is the intercept.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
}

impl Dataset {
    /// Validates and wraps a design matrix and response.
    ///
    /// Requires `n >= p >= 1`, finite entries, and an all-ones first column.
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if y.len() != n {
            return Err(Error::invalid(format!("response has {} rows, design has {n}", y.len())));
        }
        if p == 0 || n < p {
            return Err(Error::invalid(format!("need n >= p >= 1, got n = {n}, p = {p}")));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data contain non-finite values"));
        }
        if x.col(0).iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("column 0 of the design must be the intercept (all ones)"));
        }
        Ok(Self { x, y })
    }

    /// Prepends the intercept column to raw covariate rows.
    pub fn with_intercept(covariates: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = covariates.len();
        let k = covariates.first().map_or(0, Vec::len);
        let mut cols = vec![vec![1.0; n]];
        for j in 0..k {
            let mut col = Vec::with_capacity(n);
            for row in covariates {
                if row.len() != k {
                    return Err(Error::invalid("ragged covariate rows"));
                }
                col.push(row[j]);
            }
            cols.push(col);
        }
        Self::new(Matrix::from_columns(&cols), y)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Fitted values `x b`.
    pub fn fitted(&self, b: &[f64]) -> Vec<f64> {
        self.x.mul_vec(b)
    }

    /// Replaces the response, keeping the design.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }
}

/// Stopping rule shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverControl {
    /// Gradient-norm threshold.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolverControl {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 5000, seed: 0 }
    }
}

impl SolverControl {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("solver control needs tol > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    pub objective: f64,
}

impl FitDiagnostics {
    /// Turns a non-converged run into [`Error::NotConverged`].
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                gradient_norm: self.final_gradient_norm,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_missing_intercept() {
        let x = Matrix::from_row_major(2, 2, &[1.0, 0.5, 2.0, 0.1]);
        assert!(Dataset::new(x, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_short_sample() {
        let x = Matrix::from_row_major(1, 2, &[1.0, 0.5]);
        assert!(Dataset::new(x, vec![0.0]).is_err());
    }

    #[test]
    fn rejects_nan() {
        assert!(Dataset::with_intercept(&[vec![f64::NAN], vec![1.0]], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn intercept_is_prepended() {
        let d = Dataset::with_intercept(&[vec![2.0], vec![3.0]], vec![0.0, 1.0]).unwrap();
        assert_eq!(d.p(), 2);
        assert_eq!(d.x().col(0), &[1.0, 1.0]);
        assert_eq!(d.x().col(1), &[2.0, 3.0]);
    }
}
