//! Dense column-major matrices and the handful of kernels the estimators need.
//!
//! Everything here is sized for `p` up to a few hundred and `n` in the tens of
//! thousands: matrix-vector products, weighted Gram matrices, and a Cholesky
//! factorization that refuses rank-deficient input instead of regularizing it.

use crate::error::{Error, Result};

/// Dense matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, the natural layout for literals.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols, "row-major data has wrong length");
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = values[i * cols + j];
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let c = columns.len();
        let r = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for col in columns {
            assert_eq!(col.len(), r, "ragged columns");
            data.extend_from_slice(col);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.cols);
        let mut acc = 0.0;
        for (j, &vj) in v.iter().enumerate() {
            acc += self.data[j * self.rows + i] * vj;
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "dimension mismatch in mul_vec");
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.col(j)) {
                *o += x * vj;
            }
        }
        out
    }

    /// `selfᵀ * r`.
    pub fn tr_mul_vec(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows, "dimension mismatch in tr_mul_vec");
        (0..self.cols).map(|j| dot(self.col(j), r)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let col = self.mul_vec(other.col(j));
            out.col_mut(j).copy_from_slice(&col);
        }
        out
    }

    /// `selfᵀ diag(w) self`, or `selfᵀ self` when `w` is `None`.
    pub fn weighted_gram(&self, w: Option<&[f64]>) -> Matrix {
        if let Some(w) = w {
            assert_eq!(w.len(), self.rows, "weight length mismatch");
        }
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        let mut scratch = vec![0.0; self.rows];
        for j in 0..p {
            let cj = self.col(j);
            match w {
                Some(w) => {
                    for ((s, &x), &wi) in scratch.iter_mut().zip(cj).zip(w) {
                        *s = x * wi;
                    }
                }
                None => scratch.copy_from_slice(cj),
            }
            for k in j..p {
                let v = dot(&scratch, self.col(k));
                g[(j, k)] = v;
                g[(k, j)] = v;
            }
        }
        g
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for j in 0..self.cols {
            let src = self.col(j);
            for (dst, &i) in out.col_mut(j).iter_mut().zip(idx) {
                *dst = src[i];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0_f64;
        for j in 0..self.cols {
            for i in 0..j {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows as nested vectors.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Serialized row by row, as a list of rows.
impl serde::Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(&self.row(i))?;
        }
        seq.end()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Lower-triangular Cholesky factor `a = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix.
    ///
    /// A pivot at or below `p * eps * max(diag)` is treated as singular.
    pub fn new(a: &Matrix) -> Result<Self> {
        let p = a.nrows();
        if p != a.ncols() {
            return Err(Error::invalid("Cholesky needs a square matrix"));
        }
        if !a.is_finite() {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        if p > 0 && a.asymmetry() > 1e-10 {
            return Err(Error::invalid("matrix is not symmetric"));
        }
        let max_diag = a.diagonal().into_iter().fold(0.0_f64, f64::max);
        let threshold = p as f64 * f64::EPSILON * max_diag;
        let mut l = Matrix::zeros(p, p);
        for j in 0..p {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > threshold) {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..p {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L w = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let p = self.dim();
        assert_eq!(b.len(), p);
        let mut w = b.to_vec();
        for i in 0..p {
            let mut s = w[i];
            for k in 0..i {
                s -= self.l[(i, k)] * w[k];
            }
            w[i] = s / self.l[(i, i)];
        }
        w
    }

    /// Solves `Lᵀ x = w`.
    pub fn backward(&self, w: &[f64]) -> Vec<f64> {
        let p = self.dim();
        assert_eq!(w.len(), p);
        let mut x = w.to_vec();
        for i in (0..p).rev() {
            let mut s = x[i];
            for k in i + 1..p {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.nrows(), self.dim());
        let cols: Vec<Vec<f64>> = (0..b.ncols()).map(|j| self.solve(b.col(j))).collect();
        Matrix::from_columns(&cols)
    }

    pub fn inverse(&self) -> Matrix {
        let mut inv = self.solve_matrix(&Matrix::identity(self.dim()));
        symmetrize(&mut inv);
        inv
    }
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(Cholesky::new(a)?.solve(b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn sym_inverse(a: &Matrix) -> Result<Matrix> {
    Ok(Cholesky::new(a)?.inverse())
}

/// Averages `a` with its transpose in place.
pub fn symmetrize(a: &mut Matrix) {
    let p = a.nrows();
    for j in 0..p {
        for i in 0..j {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Sample second-moment matrix `(1/n) xᵀx`.
pub fn gram(x: &Matrix) -> Matrix {
    let mut g = x.weighted_gram(None);
    g.scale(1.0 / x.nrows() as f64);
    g
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Only used for PSD / Loewner-order checks on small matrices.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let p = a.nrows();
    let mut m = a.clone();
    symmetrize(&mut m);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for j in 0..p {
            for i in 0..j {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= 1e-30 * (1.0 + m.max_abs().powi(2)) {
            break;
        }
        for q in 1..p {
            for k in 0..q {
                let apq = m[(k, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(k, k)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..p {
                    let mrk = m[(r, k)];
                    let mrq = m[(r, q)];
                    m[(r, k)] = c * mrk - s * mrq;
                    m[(r, q)] = s * mrk + c * mrq;
                }
                for r in 0..p {
                    let mkr = m[(k, r)];
                    let mqr = m[(q, r)];
                    m[(k, r)] = c * mkr - s * mqr;
                    m[(q, r)] = s * mkr + c * mqr;
                }
            }
        }
    }
    let mut ev = m.diagonal();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_solve() {
        let x = cholesky_solve(&Matrix::identity(2), &[3.0, -1.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = Matrix::from_row_major(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let x = cholesky_solve(&a, &[8.0, 27.0]).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn two_by_two_solve_matches_hand_elimination() {
        // [[2,1],[1,2]]^{-1} = (1/3)[[2,-1],[-1,2]]; times (3,3) gives (1,1).
        let a = Matrix::from_row_major(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let x = cholesky_solve(&a, &[3.0, 3.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::from_row_major(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite { index: 1, .. })));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let a = Matrix::from_row_major(2, 2, &[2.0, 1.0, 0.5, 2.0]);
        assert!(matches!(Cholesky::new(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gram_of_intercept_column() {
        let x = Matrix::from_columns(&[vec![1.0; 5]]);
        assert_eq!(gram(&x), Matrix::from_row_major(1, 1, &[1.0]));
    }

    #[test]
    fn gram_two_by_two() {
        let x = Matrix::from_row_major(2, 2, &[1.0, 2.0, 1.0, 4.0]);
        let g = gram(&x);
        assert_abs_diff_eq!(g[(0, 0)], 1.0);
        assert_abs_diff_eq!(g[(0, 1)], 3.0);
        assert_abs_diff_eq!(g[(1, 0)], 3.0);
        assert_abs_diff_eq!(g[(1, 1)], 10.0);
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        let a = Matrix::from_row_major(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = sym_eigenvalues(&a);
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = Matrix::from_row_major(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = sym_inverse(&a).unwrap();
        let prod = a.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[(i, j)], e, epsilon = 1e-12);
            }
        }
    }
}
