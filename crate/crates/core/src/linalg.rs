//! Small dense matrices for the p ≤ ~20 systems the estimators solve.

use std::ops::{Index, IndexMut};

use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// `self += scale * x yᵀ`
    pub fn add_outer(&mut self, scale: T, x: &[T], y: &[T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            let s = scale * xi;
            if s == T::zero() {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &yj) in row.iter_mut().zip(y) {
                *r = *r + s * yj;
            }
        }
    }

    pub fn add_scaled(&mut self, scale: T, other: &Matrix<T>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + scale * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Sub-matrix on the given row and column index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), cols.len());
        for (oi, &i) in rows.iter().enumerate() {
            for (oj, &j) in cols.iter().enumerate() {
                out[(oi, oj)] = self[(i, j)];
            }
        }
        out
    }

    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let half = T::of(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let m = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn trace(&self) -> T {
        self.diag().into_iter().sum()
    }

    pub fn lu(&self) -> Option<Lu<T>> {
        Lu::new(self)
    }

    pub fn inverse(&self) -> Option<Self> {
        self.lu().map(|lu| lu.inverse())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorisation with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Returns `None` when a pivot falls below `n·ε·max|a_ij|`.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let scale = a.max_abs();
        if n == 0 {
            return Some(Self { lu: a.clone(), perm: Vec::new() });
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return None;
        }
        let threshold = scale * T::epsilon() * T::of_usize(n) * T::of(16.0);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(pv > threshold) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != T::zero() {
                    for j in (k + 1)..n {
                        lu[(i, j)] = lu[(i, j)] - f * lu[(k, j)];
                    }
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s = s - self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s = s - self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.perm.len();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Cholesky test for positive semi-definiteness with a relative tolerance.
pub fn is_psd<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> bool {
    let n = a.rows();
    let tol = rel_tol * a.max_abs().max(T::min_positive_value());
    let mut l = Matrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return false;
        }
        let djj = if d > tol { d.sqrt() } else { T::zero() };
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = if djj > T::zero() { s / djj } else { T::zero() };
        }
    }
    true
}
