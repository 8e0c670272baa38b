//! Dense real linear algebra for the small (n ≤ a few hundred) symmetric
//! matrices that appear as covariances, barrier Hessians and LMI blocks.
//!
//! Storage is plain row-major `Vec<T>`; nothing here is packed or sparse.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::scalar::Real;

/// Relative pivot threshold used by [`cholesky`]: a pivot must exceed this
/// fraction of the largest diagonal magnitude.
pub const PD_PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} failed)")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
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
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
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

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::from_vec(r, c, rows.concat())
    }

    pub fn column(values: &[T]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Matrix<T>) -> Self {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix<T>) -> Self {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix<T>, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "elementwise dimension mismatch"
        );
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// True when every entry on or above the diagonal is exactly zero.
    pub fn is_strictly_lower(&self) -> bool {
        (0..self.rows).all(|i| (i..self.cols).all(|j| self[(i, j)] == T::zero()))
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

/// Dense real symmetric matrix. Symmetry is an invariant of every
/// constructor and mutator: writing `(i, j)` also writes `(j, i)`.
#[derive(Clone, PartialEq)]
pub struct SymMatrix<T> {
    inner: Matrix<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            inner: Matrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Matrix::identity(n),
        }
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        Self::diagonal(&vec![s; n])
    }

    /// Builds the matrix from its lower triangle: `f(i, j)` is only called
    /// with `i >= j`.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Wraps a square matrix, rejecting it if any pair differs by more than
    /// `tol · max|a_ij|`. The stored matrix is the exact average `(A + Aᵀ)/2`.
    pub fn try_from_matrix(a: &Matrix<T>, tol: T) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch {
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let bound = tol * a.max_abs().max(T::min_positive_value());
        for i in 0..a.rows() {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > bound {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self::symmetrize(a))
    }

    /// `(A + Aᵀ)/2` for a square `A`.
    pub fn symmetrize(a: &Matrix<T>) -> Self {
        assert!(a.is_square(), "symmetrize needs a square matrix");
        let half = T::lit(0.5);
        Self::from_lower_fn(a.rows(), |i, j| half * (a[(i, j)] + a[(j, i)]))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.inner[(i, j)]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.inner[(i, j)] = v;
        self.inner[(j, i)] = v;
    }

    /// Adds `v` to `(i, j)` and, off the diagonal, to `(j, i)`.
    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: T) {
        self.inner[(i, j)] += v;
        if i != j {
            self.inner[(j, i)] += v;
        }
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.inner
    }

    pub fn trace(&self) -> T {
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> T {
        self.inner.frobenius_norm()
    }

    pub fn max_abs_diag(&self) -> T {
        (0..self.n()).fold(T::zero(), |m, i| m.max(self.get(i, i).abs()))
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            inner: self.inner.scale(s),
        }
    }

    pub fn add(&self, rhs: &SymMatrix<T>) -> Self {
        Self {
            inner: self.inner.add(&rhs.inner),
        }
    }

    pub fn sub(&self, rhs: &SymMatrix<T>) -> Self {
        Self {
            inner: self.inner.sub(&rhs.inner),
        }
    }

    /// `A + s·I`.
    pub fn shift_diagonal(&self, s: T) -> Self {
        let mut out = self.clone();
        for i in 0..self.n() {
            out.inner[(i, i)] += s;
        }
        out
    }

    /// Leading `k×k` principal block.
    pub fn leading_block(&self, k: usize) -> Self {
        assert!(k <= self.n());
        Self::from_lower_fn(k, |i, j| self.get(i, j))
    }

    /// Congruence `M · self · Mᵀ`, symmetrized to absorb rounding.
    pub fn congruence(&self, m: &Matrix<T>) -> Self {
        let prod = m.matmul(&self.inner).matmul(&m.transpose());
        Self::symmetrize(&prod)
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> SymMatrix<U> {
        SymMatrix {
            inner: self.inner.map(f),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for SymMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.inner)
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor<T> {
    l: Matrix<T>,
}

/// Cholesky factorization. Fails with the index of the first pivot that is
/// not above `PD_PIVOT_RTOL · max|a_ii|`.
pub fn cholesky<T: Real>(a: &SymMatrix<T>) -> Result<CholeskyFactor<T>, LinalgError> {
    let n = a.n();
    let threshold = T::lit(PD_PIVOT_RTOL) * a.max_abs_diag();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) || d <= T::zero() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            let (ri, rj) = (i * n, j * n);
            for k in 0..j {
                s -= l.data[ri + k] * l.data[rj + k];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(CholeskyFactor { l })
}

impl<T: Real> CholeskyFactor<T> {
    pub fn n(&self) -> usize {
        self.l.rows()
    }

    pub fn l(&self) -> &Matrix<T> {
        &self.l
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        two * (0..self.n()).map(|i| self.l[(i, i)].ln()).sum::<T>()
    }

    pub fn reconstruct(&self) -> SymMatrix<T> {
        SymMatrix::symmetrize(&self.l.matmul(&self.l.transpose()))
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n();
        assert_eq!(b.len(), n, "rhs length mismatch");
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for (k, bk) in b.iter().enumerate().skip(i + 1) {
                s -= self.l[(k, i)] * *bk;
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(b.rows(), self.n(), "rhs row count mismatch");
        let mut out = Matrix::zeros(b.rows(), b.cols());
        let mut col = vec![T::zero(); b.rows()];
        for j in 0..b.cols() {
            for i in 0..b.rows() {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..b.rows() {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    /// `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> SymMatrix<T> {
        let n = self.n();
        // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv = Matrix::zeros(n, n);
        for j in 0..n {
            linv[(j, j)] = T::one() / self.l[(j, j)];
            for i in (j + 1)..n {
                let mut s = T::zero();
                for k in j..i {
                    s += self.l[(i, k)] * linv[(k, j)];
                }
                linv[(i, j)] = -s / self.l[(i, i)];
            }
        }
        SymMatrix::from_lower_fn(n, |i, j| {
            // (L⁻ᵀL⁻¹)_ij = Σ_k linv[k,i] linv[k,j], k ≥ max(i, j) = i
            let mut s = T::zero();
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            s
        })
    }
}

/// Natural-log determinant of a positive definite matrix.
pub fn log_det<T: Real>(a: &SymMatrix<T>) -> Result<T, LinalgError> {
    cholesky(a).map(|c| c.log_det())
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn solve_spd<T: Real>(a: &SymMatrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    if b.rows() != a.n() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.n(),
            found: b.rows(),
        });
    }
    Ok(cholesky(a)?.solve(b))
}

pub fn inverse_spd<T: Real>(a: &SymMatrix<T>) -> Result<SymMatrix<T>, LinalgError> {
    Ok(cholesky(a)?.inverse())
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Householder reduction to tridiagonal form followed by the implicit QL
/// iteration with Wilkinson-style shifts.
pub fn sym_eigenvalues<T: Real>(a: &SymMatrix<T>) -> Vec<T> {
    let n = a.n();
    if n == 0 {
        return Vec::new();
    }
    let (mut d, mut e) = tridiagonalize(a);
    tridiagonal_ql(&mut d, &mut e);
    d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    d
}

pub fn min_eigenvalue<T: Real>(a: &SymMatrix<T>) -> T {
    sym_eigenvalues(a).first().copied().unwrap_or(T::zero())
}

/// Householder tridiagonalization. Returns (diagonal, subdiagonal) with the
/// subdiagonal shifted so `e[i]` couples `d[i]` and `d[i+1]`; `e[n-1] = 0`.
fn tridiagonalize<T: Real>(a: &SymMatrix<T>) -> (Vec<T>, Vec<T>) {
    let n = a.n();
    let mut m = a.as_matrix().clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = T::zero();
        if l > 0 {
            let scale: T = (0..=l).map(|k| m[(i, k)].abs()).sum();
            if scale == T::zero() {
                e[i] = m[(i, l)];
            } else {
                for k in 0..=l {
                    m[(i, k)] /= scale;
                    h += m[(i, k)] * m[(i, k)];
                }
                let f = m[(i, l)];
                let g = if f >= T::zero() { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                m[(i, l)] = f - g;
                let mut f = T::zero();
                for j in 0..=l {
                    let mut g = T::zero();
                    for k in 0..=j {
                        g += m[(j, k)] * m[(i, k)];
                    }
                    for k in (j + 1)..=l {
                        g += m[(k, j)] * m[(i, k)];
                    }
                    e[j] = g / h;
                    f += e[j] * m[(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = m[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let upd = f * e[k] + g * m[(i, k)];
                        m[(j, k)] -= upd;
                    }
                }
            }
        } else {
            e[i] = m[(i, l)];
        }
        d[i] = h;
    }
    for i in 0..n {
        d[i] = m[(i, i)];
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    (d, e)
}

fn tridiagonal_ql<T: Real>(d: &mut [T], e: &mut [T]) {
    let n = d.len();
    let eps = T::epsilon();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                // Not reached for finite input; leave the partial result.
                break;
            }
            let two = T::lit(2.0);
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            let signed_r = if g >= T::zero() { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + signed_r);
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
}

/// Symmetric Toeplitz matrix with `entries[i][j] = autocov[|i − j|]`;
/// lags beyond the supplied list are zero.
pub fn toeplitz<T: Real>(autocov: &[T], n: usize) -> SymMatrix<T> {
    SymMatrix::from_lower_fn(n, |i, j| autocov.get(i - j).copied().unwrap_or(T::zero()))
}
