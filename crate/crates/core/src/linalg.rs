//! Dense row-major `f64` matrices and the symmetric positive-definite solves
//! the CMMD estimator is built on.
//!
//! Every Gram matrix in this crate is at most a few hundred rows on a side, so
//! nothing here is blocked or sparse. General products go through
//! `matrixmultiply::dgemm`; transposed operands are expressed through strides
//! rather than materialized copies.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Largest `max |A - A^T|` accepted by [`Cholesky::factor`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Mat::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|` over all entries; `INFINITY` for non-square input.
    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Mat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "axpy",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_diagonal(&self, value: f64) -> Mat {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += value;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Squared Euclidean norm of every row.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Mat {
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn vstack(top: &Mat, bottom: &Mat) -> Result<Mat> {
        if top.cols != bottom.cols {
            return Err(Error::DimensionMismatch {
                op: "vstack",
                left: top.shape(),
                right: bottom.shape(),
            });
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Mat {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Operand orientation for [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

impl Trans {
    fn shape(self, m: &Mat) -> (usize, usize) {
        match self {
            Trans::No => (m.rows, m.cols),
            Trans::Yes => (m.cols, m.rows),
        }
    }

    fn strides(self, m: &Mat) -> (isize, isize) {
        match self {
            Trans::No => (m.cols as isize, 1),
            Trans::Yes => (1, m.cols as isize),
        }
    }
}

/// `op(a) * op(b)` where `op` is identity or transpose.
pub fn gemm(a: &Mat, ta: Trans, b: &Mat, tb: Trans) -> Result<Mat> {
    let (m, k) = ta.shape(a);
    let (k2, n) = tb.shape(b);
    if k != k2 {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: (m, k),
            right: (k2, n),
        });
    }
    let mut c = Mat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    let (rsa, csa) = ta.strides(a);
    let (rsb, csb) = tb.strides(b);
    // SAFETY: the strides above describe exactly the row-major buffers of `a`
    // and `b` (optionally transposed), and `c` is a fresh m x n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c.ensure_finite("matmul")
}

pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    gemm(a, Trans::No, b, Trans::No)
}

/// `a^T * b`
pub fn matmul_tn(a: &Mat, b: &Mat) -> Result<Mat> {
    gemm(a, Trans::Yes, b, Trans::No)
}

/// `a * b^T`
pub fn matmul_nt(a: &Mat, b: &Mat) -> Result<Mat> {
    gemm(a, Trans::No, b, Trans::Yes)
}

/// `Tr(a * b)` as `sum_ij a_ij b_ji`, without forming the product.
pub fn trace_of_product(a: &Mat, b: &Mat) -> Result<f64> {
    if a.cols != b.rows || b.cols != a.rows {
        return Err(Error::DimensionMismatch {
            op: "trace_of_product",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut acc = 0.0;
    for i in 0..a.rows {
        let row = a.row(i);
        for (j, &aij) in row.iter().enumerate() {
            acc += aij * b.data[j * b.cols + i];
        }
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::NonFinite("trace_of_product"))
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn factor(a: &Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                op: "cholesky",
                left: a.shape(),
                right: (a.cols, a.rows),
            });
        }
        let asym = a.max_asymmetry();
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        let n = a.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= l.data[ri + k] * l.data[rj + k];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn factor_matrix(&self) -> &Mat {
        &self.l
    }

    /// Solves `A X = B` by forward then backward substitution.
    pub fn solve(&self, b: &Mat) -> Result<Mat> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(Error::DimensionMismatch {
                op: "spd_solve",
                left: self.l.shape(),
                right: b.shape(),
            });
        }
        let m = b.cols;
        let mut x = b.clone();
        let l = &self.l.data;
        // L Y = B
        for i in 0..n {
            for k in 0..i {
                let lik = l[i * n + k];
                if lik != 0.0 {
                    let (head, tail) = x.data.split_at_mut(i * m);
                    let src = &head[k * m..(k + 1) * m];
                    for (t, s) in tail[..m].iter_mut().zip(src) {
                        *t -= lik * s;
                    }
                }
            }
            let inv = 1.0 / l[i * n + i];
            x.data[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= inv);
        }
        // L^T X = Y
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[k * n + i];
                if lki != 0.0 {
                    let (head, tail) = x.data.split_at_mut(k * m);
                    let dst = &mut head[i * m..(i + 1) * m];
                    for (d, s) in dst.iter_mut().zip(&tail[..m]) {
                        *d -= lki * s;
                    }
                }
            }
            let inv = 1.0 / l[i * n + i];
            x.data[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= inv);
        }
        x.ensure_finite("spd_solve")
    }

    /// `X A^{-1}` for any `X` with `dim` columns, using symmetry of `A`.
    pub fn solve_right(&self, x: &Mat) -> Result<Mat> {
        Ok(self.solve(&x.transpose())?.transpose())
    }

    /// `A^{-1} X A^{-1}`
    pub fn sandwich(&self, x: &Mat) -> Result<Mat> {
        self.solve_right(&self.solve(x)?)
    }
}

/// Solves `a X = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &Mat, b: &Mat) -> Result<Mat> {
    Cholesky::factor(a)?.solve(b)
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
///
/// Used for PSD checks on Gram and H matrices; cost is O(n^3) per sweep.
pub fn min_eigenvalue(a: &Mat) -> Result<f64> {
    Ok(symmetric_eigenvalues(a)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

pub fn symmetric_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "symmetric_eigenvalues",
            left: a.shape(),
            right: (a.cols, a.rows),
        });
    }
    let n = a.rows;
    let mut m = a.clone();
    // symmetrize round-off
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    Ok(m.diagonal())
}
