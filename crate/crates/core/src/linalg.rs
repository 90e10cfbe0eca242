//! Small dense real-matrix layer.
//!
//! Everything here is sequential with a fixed summation order, so repeated
//! runs on the same inputs give bit-identical results.

use std::fmt;

use thiserror::Error;

/// Relative tolerance used by the symmetry checks: `|a_ij - a_ji|` must not
/// exceed `SYMMETRY_TOL * max(1, max|a|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default relative cut-off for numerical rank in [`condensed_svd`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Default 2-norm condition limit above which [`regularized_inverse`] starts
/// adding a ridge.
pub const DEFAULT_COND_LIMIT: f64 = 1e12;

/// Number of x10 steps tried by the ridge escalation ladder.
pub const RIDGE_LADDER_STEPS: u32 = 24;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("a {rows}x{cols} matrix needs {} entries, got {len}", rows * cols)]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {defect:e})")]
    NotSymmetric { defect: f64 },
    #[error("ridge must be finite and nonnegative, got {0}")]
    InvalidRidge(f64),
    #[error("matrix is singular even after regularization (last ridge tried {last_ridge:e})")]
    SingularAfterRegularization { last_ridge: f64 },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
}

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Rejects wrong lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows * cols != data.len() {
            return Err(LinalgError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(LinalgError::BadLength {
                    rows: n_rows,
                    cols: n_cols,
                    len: data.len() + row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n_rows, n_cols, data)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self, LinalgError> {
        Ok(Self::from_rows(columns)?.transpose())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub(crate) fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = 0.0;
            for k in 0..self.cols {
                acc += self.get(i, k) * other.get(k, j);
            }
            acc
        }))
    }

    /// `self * selfᵀ`, filled from the upper triangle so the result is
    /// exactly symmetric.
    pub fn gram_rows(&self) -> Matrix {
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.row(i), self.row(j));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.cols != v.len() {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        hadamard(self, other)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Returns `self + shift * I`.
    pub fn shifted_diagonal(&self, shift: f64) -> Result<Matrix, LinalgError> {
        self.require_square()?;
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += shift;
        }
        Ok(out)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entry (the max-norm); zero for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && self.symmetry_defect() <= tol * self.max_abs().max(1.0)
    }

    fn require_square(&self) -> Result<(), LinalgError> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    fn require_symmetric(&self) -> Result<(), LinalgError> {
        self.require_square()?;
        if self.is_symmetric(SYMMETRY_TOL) {
            Ok(())
        } else {
            Err(LinalgError::NotSymmetric {
                defect: self.symmetry_defect(),
            })
        }
    }

    /// Averages `a` and `aᵀ`.
    pub(crate) fn symmetrized(&self) -> Matrix {
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, " ")?;
            for v in self.row(i) {
                write!(f, " {v:>12.6}")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Entrywise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    a.zip_with(b, |x, y| x * y)
}

/// Result of [`regularized_inverse`]: `(a + ridge_used * I)^-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizedInverse {
    pub inverse: Matrix,
    pub ridge_used: f64,
}

/// Inverts a symmetric matrix, adding a ridge when it is ill-conditioned.
///
/// A positive `ridge` is always applied as given. With `ridge == 0` the
/// matrix is inverted as-is if its 2-norm condition number is at most
/// `cond_limit`; otherwise ridges `1e-12 * |trace| / n * 10^k`,
/// `k = 0..=RIDGE_LADDER_STEPS`, are tried in order and the first one that
/// brings the condition number under the limit is used.
pub fn regularized_inverse(
    a: &Matrix,
    ridge: f64,
    cond_limit: f64,
) -> Result<RegularizedInverse, LinalgError> {
    a.require_symmetric()?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(LinalgError::InvalidRidge(ridge));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(RegularizedInverse {
            inverse: Matrix::zeros(0, 0),
            ridge_used: 0.0,
        });
    }

    let lambda = if ridge > 0.0 {
        ridge
    } else {
        let eig = symmetric_eigenvalues(a)?;
        let cond = |shift: f64| {
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| {
                let v = (l + shift).abs();
                (lo.min(v), hi.max(v))
            });
            if lo == 0.0 {
                f64::INFINITY
            } else {
                hi / lo
            }
        };
        if cond(0.0) <= cond_limit {
            0.0
        } else {
            let base = 1e-12 * a.trace().abs() / n as f64;
            let mut chosen = None;
            let mut last = 0.0;
            for k in 0..=RIDGE_LADDER_STEPS {
                let candidate = base * 10f64.powi(k as i32);
                if candidate == 0.0 {
                    break;
                }
                last = candidate;
                if cond(candidate) <= cond_limit {
                    chosen = Some(candidate);
                    break;
                }
            }
            match chosen {
                Some(l) => {
                    log::debug!("regularized_inverse: escalated ridge to {l:e}");
                    l
                }
                None => return Err(LinalgError::SingularAfterRegularization { last_ridge: last }),
            }
        }
    };

    let shifted = a.shifted_diagonal(lambda)?;
    let inverse = gauss_jordan_inverse(&shifted)
        .ok_or(LinalgError::SingularAfterRegularization { last_ridge: lambda })?;
    Ok(RegularizedInverse {
        inverse: inverse.symmetrized(),
        ridge_used: lambda,
    })
}

/// Gauss-Jordan elimination with partial pivoting. `None` on an exactly
/// zero pivot.
fn gauss_jordan_inverse(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| work.get(r1, col).abs().total_cmp(&work.get(r2, col).abs()).then(r2.cmp(&r1)))?;
        let pivot = work.get(pivot_row, col);
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        if pivot_row != col {
            swap_rows(&mut work, pivot_row, col);
            swap_rows(&mut inv, pivot_row, col);
        }
        for j in 0..n {
            work.set(col, j, work.get(col, j) / pivot);
            inv.set(col, j, inv.get(col, j) / pivot);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work.get(r, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                work.set(r, j, work.get(r, j) - factor * work.get(col, j));
                inv.set(r, j, inv.get(r, j) - factor * inv.get(col, j));
            }
        }
    }
    Some(inv)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let cols = m.cols;
    for j in 0..cols {
        m.data.swap(a * cols + j, b * cols + j);
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `pivot_tol * max|a|`, i.e. when
/// the system is numerically singular.
pub fn solve_linear(a: &Matrix, b: &[f64], pivot_tol: f64) -> Option<Vec<f64>> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return None;
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let mut work = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut pivot_row = col;
        for r in (col + 1)..n {
            if work.get(r, col).abs() > work.get(pivot_row, col).abs() {
                pivot_row = r;
            }
        }
        let pivot = work.get(pivot_row, col);
        if pivot.abs() <= pivot_tol * scale {
            return None;
        }
        if pivot_row != col {
            swap_rows(&mut work, pivot_row, col);
            rhs.swap(pivot_row, col);
        }
        for r in (col + 1)..n {
            let factor = work.get(r, col) / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                work.set(r, j, work.get(r, j) - factor * work.get(col, j));
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in (i + 1)..n {
            acc -= work.get(i, j) * x[j];
        }
        x[i] = acc / work.get(i, i);
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
/// or `None` if a non-positive pivot shows up.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut acc = a.get(i, j);
            for k in 0..j {
                acc -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, acc / ljj);
        }
    }
    Some(l)
}

/// Runs cyclic Jacobi on a copy of the symmetric matrix `a` and returns the
/// (nearly) diagonalized result.
fn jacobi_diagonalize(a: &Matrix) -> Result<Matrix, LinalgError> {
    a.require_symmetric()?;
    let n = a.rows();
    let mut m = a.symmetrized();
    let frob2: f64 = m.data.iter().map(|v| v * v).sum();
    let target = (1e-15f64).powi(2) * frob2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m.get(i, j) * m.get(i, j);
                }
            }
        }
        if off <= target {
            return Ok(m);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let tau = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    Err(LinalgError::ConvergenceFailure {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    let m = jacobi_diagonalize(a)?;
    let mut eig: Vec<f64> = (0..m.rows()).map(|i| m.get(i, i)).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Lower estimate of the smallest eigenvalue of a symmetric matrix.
///
/// Diagonalizes with Jacobi and applies Gershgorin to what is left, so the
/// value never overshoots the true eigenvalue by more than rounding.
pub fn min_eigenvalue_bound(a: &Matrix) -> Result<f64, LinalgError> {
    let m = jacobi_diagonalize(a)?;
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut bound = f64::INFINITY;
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m.get(i, j).abs()).sum();
        bound = bound.min(m.get(i, i) - radius);
    }
    Ok(bound)
}

/// Rank-truncated SVD `a ≈ u · diag(s) · vᵀ`.
///
/// Column signs follow a fixed convention: in every column of `u` the entry
/// of largest magnitude is positive (lowest index wins ties); `v` is flipped
/// alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
    pub rank: usize,
}

impl CondensedSvd {
    pub fn reconstruct(&self) -> Matrix {
        Matrix::from_fn(self.u.rows(), self.v.rows(), |i, j| {
            let mut acc = 0.0;
            for q in 0..self.rank {
                acc += self.u.get(i, q) * self.s[q] * self.v.get(j, q);
            }
            acc
        })
    }
}

/// One-sided (Hestenes) Jacobi SVD, truncated to singular values above
/// `rank_tol * s_max`.
pub fn condensed_svd(a: &Matrix, rank_tol: f64) -> Result<CondensedSvd, LinalgError> {
    let (rows, cols) = a.shape();
    // Work column-wise.
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = cols < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::ConvergenceFailure {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let sigma: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let s_max = order.first().map_or(0.0, |&i| sigma[i]);
    let rank = if s_max > 0.0 {
        order.iter().take_while(|&&i| sigma[i] > rank_tol * s_max).count()
    } else {
        0
    };

    let mut u_cols = Vec::with_capacity(rank);
    let mut v_cols = Vec::with_capacity(rank);
    let mut s = Vec::with_capacity(rank);
    for &j in order.iter().take(rank) {
        let mut u_col: Vec<f64> = w[j].iter().map(|x| x / sigma[j]).collect();
        let mut v_col = v[j].clone();
        let mut lead = 0;
        for (i, x) in u_col.iter().enumerate() {
            if x.abs() > u_col[lead].abs() {
                lead = i;
            }
        }
        if rows > 0 && u_col[lead] < 0.0 {
            u_col.iter_mut().for_each(|x| *x = -*x);
            v_col.iter_mut().for_each(|x| *x = -*x);
        }
        u_cols.push(u_col);
        v_cols.push(v_col);
        s.push(sigma[j]);
    }
    let to_matrix = |columns: &[Vec<f64>], n: usize| {
        Matrix::from_fn(n, columns.len(), |i, q| columns[q][i])
    };
    Ok(CondensedSvd {
        u: to_matrix(&u_cols, rows),
        s,
        v: to_matrix(&v_cols, cols),
        rank,
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
