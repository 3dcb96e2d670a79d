//! Small dense linear algebra for the m×m task-relationship matrices.
//!
//! The matrices handled here are task-by-task (m is at most a few hundred),
//! so simple O(m³) routines are used: cyclic Jacobi for symmetric
//! eigendecomposition and Cholesky for SPD inversion.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, s: T) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn add_diagonal(&self, s: T) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += s;
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Averages the matrix with its transpose.
    pub fn symmetrize(&self) -> Self {
        let t = self.transpose();
        self.add(&t).scale(T::half())
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in ascending order and the matching eigenvectors
    /// as the columns of the second matrix.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Mat<T>) {
        assert!(self.is_square(), "eigendecomposition of a non-square matrix");
        let n = self.rows;
        let mut a = self.symmetrize();
        let mut v = Mat::identity(n);
        let eps = T::epsilon();

        for _sweep in 0..100 {
            let mut off = T::zero();
            let mut total = T::zero();
            for i in 0..n {
                for j in 0..n {
                    let x = a[(i, j)] * a[(i, j)];
                    total += x;
                    if i != j {
                        off += x;
                    }
                }
            }
            if off <= eps * eps * total || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let theta = (aqq - app) / (T::of(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("finite eigenvalues"));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Mat::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..n {
                vectors[(k, new)] = v[(k, old)];
            }
        }
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> T {
        let (values, _) = self.symmetric_eigen();
        values.first().copied().unwrap_or_else(T::zero)
    }

    /// Rebuilds `V f(Λ) Vᵀ` from an eigendecomposition.
    pub fn spectral_map(values: &[T], vectors: &Mat<T>, f: impl Fn(T) -> T) -> Mat<T> {
        let n = values.len();
        let mapped: Vec<T> = values.iter().map(|&x| f(x)).collect();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = T::zero();
                for k in 0..n {
                    acc += vectors[(i, k)] * mapped[k] * vectors[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    /// Lower Cholesky factor; fails unless the matrix is symmetric positive definite.
    pub fn cholesky(&self) -> Result<Mat<T>> {
        if !self.is_square() {
            return Err(Error::Dimension("cholesky of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: self.min_eigenvalue().as_f64(),
                });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }

    /// Inverse of a symmetric positive definite matrix.
    ///
    /// The smallest eigenvalue is checked first so the error carries it.
    pub fn inverse_spd(&self) -> Result<Mat<T>> {
        let sym = self.symmetrize();
        let min = sym.min_eigenvalue();
        if !(min > T::zero()) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min.as_f64(),
            });
        }
        let l = sym.cholesky()?;
        let n = self.rows;
        let mut inv = Mat::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for c in 0..n {
            // forward solve L y = e_c
            for i in 0..n {
                let mut s = if i == c { T::one() } else { T::zero() };
                for k in 0..i {
                    s -= l[(i, k)] * col[k];
                }
                col[i] = s / l[(i, i)];
            }
            // back solve Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in (i + 1)..n {
                    s -= l[(k, i)] * col[k];
                }
                col[i] = s / l[(i, i)];
            }
            for r in 0..n {
                inv[(r, c)] = col[r];
            }
        }
        Ok(inv.symmetrize())
    }

    /// Quadratic form of `self ⊗ I_d` over stacked blocks: `Σ_{t,t'} A_{tt'} ⟨b_t, b_t'⟩`.
    pub fn kron_quadratic_form(&self, blocks: &[Vec<T>]) -> T {
        assert_eq!(self.rows, blocks.len());
        let mut acc = T::zero();
        for t in 0..self.rows {
            for u in 0..self.cols {
                let a = self[(t, u)];
                if a != T::zero() {
                    acc += a * dot(&blocks[t], &blocks[u]);
                }
            }
        }
        acc
    }

    /// `(self ⊗ I_d) b` over stacked blocks.
    pub fn kron_apply(&self, blocks: &[Vec<T>]) -> Vec<Vec<T>> {
        assert_eq!(self.cols, blocks.len());
        let d = blocks.first().map_or(0, Vec::len);
        (0..self.rows)
            .map(|t| {
                let mut out = vec![T::zero(); d];
                for (u, b) in blocks.iter().enumerate() {
                    let a = self[(t, u)];
                    if a != T::zero() {
                        crate::scalar::axpy(a, b, &mut out);
                    }
                }
                out
            })
            .collect()
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}
