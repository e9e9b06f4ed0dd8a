//! Dense real linear algebra: the handful of operations K-FAC needs.
//!
//! [`Matrix`] is row-major, double precision. Arithmetic helpers do not re-check
//! finiteness on every result; only the checked constructors do.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm, relative to the matrix norm, at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of full Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Eigenvalues in `[-EIG_CLAMP, 0)` are treated as round-off and clamped to zero.
pub const EIG_CLAMP: f64 = 1e-10;
/// Largest 1-norm condition estimate accepted by [`dense_inverse`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Checked constructor: the length must match and every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite entry at index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows. Panics on ragged input; intended for literals.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            m.data[i * n + i] = *v;
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn mul_unchecked(&self, other: &Matrix) -> Matrix {
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Matrix::from_vec_unchecked(n, m, out)
    }

    /// `selfᵀ · other` without forming the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(format!(
                "t_matmul {}x{}ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * m..(i + 1) * m];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_vec_unchecked(n, m, out))
    }

    /// `self · otherᵀ` without forming the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim(format!(
                "matmul_t {}x{} by {}x{}ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Matrix::from_vec_unchecked(n, m, out))
    }

    fn check_same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{op} {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        let data = self.data.iter().map(|a| alpha * a).collect();
        Matrix::from_vec_unchecked(self.rows, self.cols, data)
    }

    /// `self ← self + alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `self + alpha · I`.
    pub fn add_diag(&self, alpha: f64) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out.data[i * self.cols + i] += alpha;
        }
        out
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::dim(format!("symmetrize {}x{}", self.rows, self.cols)));
        }
        let n = self.rows;
        Ok(Matrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i))))
    }

    /// Stacks the columns of `self` into a single `rows·cols × 1` column.
    pub fn vec_columns(&self) -> Matrix {
        self.transpose().reshaped(self.rows * self.cols, 1)
    }

    /// Inverse of [`Matrix::vec_columns`].
    pub fn unvec_columns(v: &Matrix, rows: usize, cols: usize) -> Matrix {
        assert_eq!(v.data.len(), rows * cols);
        Matrix::from_vec_unchecked(cols, rows, v.data.clone()).transpose()
    }

    fn reshaped(mut self, rows: usize, cols: usize) -> Matrix {
        assert_eq!(self.data.len(), rows * cols);
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Kronecker product: `out[i·b.rows + k, j·b.cols + l] = a[i, j] · b[k, l]`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    let out_cols = ac * bc;
    for i in 0..ar {
        for j in 0..ac {
            let aij = a.get(i, j);
            for k in 0..br {
                let row = (i * br + k) * out_cols + j * bc;
                for l in 0..bc {
                    out.data[row + l] = aij * b.get(k, l);
                }
            }
        }
    }
    out
}

/// Symmetric eigendecomposition `s = q · diag(d) · qᵀ`, eigenvalues descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymEig {
    /// Orthogonal; column `j` is the eigenvector for `d[j]`.
    pub q: Matrix,
    pub d: Vec<f64>,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.d.len();
        let qd = Matrix::from_fn(n, n, |i, j| self.q.get(i, j) * self.d[j]);
        qd.matmul_t(&self.q).expect("square factors")
    }

    /// Eigenvalues with round-off negatives in `[-EIG_CLAMP, 0)` set to zero.
    pub fn clamped_values(&self) -> Vec<f64> {
        self.d
            .iter()
            .map(|&v| if (-EIG_CLAMP..0.0).contains(&v) { 0.0 } else { v })
            .collect()
    }
}

/// Cyclic Jacobi eigendecomposition of the symmetric part of `s`.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    if !s.is_square() {
        return Err(Error::dim(format!("sym_eig of {}x{}", s.rows, s.cols)));
    }
    jacobi(s.symmetrized()?, Matrix::identity(s.rows))
}

/// Like [`sym_eig`], but starts the rotations from a previous eigenbasis.
///
/// When `s` is close to a matrix already diagonalized by `basis` (for example a
/// slowly moving average), `basisᵀ·s·basis` is nearly diagonal and only a sweep
/// or two is needed.
pub fn sym_eig_from(s: &Matrix, basis: &Matrix) -> Result<SymEig> {
    if !s.is_square() || basis.shape() != s.shape() {
        return Err(Error::dim(format!(
            "sym_eig_from {}x{} with basis {}x{}",
            s.rows, s.cols, basis.rows, basis.cols
        )));
    }
    let sym = s.symmetrized()?;
    let rotated = basis.t_matmul(&sym)?.mul_unchecked(basis).symmetrized()?;
    jacobi(rotated, basis.clone())
}

fn jacobi(a: Matrix, v: Matrix) -> Result<SymEig> {
    let n = a.rows;
    let norm = a.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite entries in sym_eig input".into()));
    }
    // Rotations below this size are skipped: if every off-diagonal entry is
    // under it, the off-diagonal norm is already below half the tolerance.
    let skip = JACOBI_TOL * norm / (2.0 * n.max(1) as f64);
    let mut a = a.data;
    // rows of `vt` are the eigenvector columns, so rotations touch contiguous memory
    let mut vt = v.transpose().data;

    let mut converged = false;
    for _ in 0..=JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| i * n + j))
            .map(|idx| a[idx] * a[idx])
            .sum();
        if off.sqrt() <= JACOBI_TOL * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A ← Jᵀ A J, with J the rotation in the (p, q) plane.
                for k in 0..n {
                    let (kp, kq) = (k * n + p, k * n + q);
                    let (akp, akq) = (a[kp], a[kq]);
                    a[kp] = c * akp - s * akq;
                    a[kq] = s * akp + c * akq;
                }
                rotate_rows(&mut a, n, p, q, c, s);
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                rotate_rows(&mut vt, n, p, q, c, s);
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let d = order.iter().map(|&i| a[i * n + i]).collect();
    let q = Matrix::from_fn(n, n, |r, c| vt[order[c] * n + r]);
    Ok(SymEig { q, d })
}

/// Rows `p < q` of a row-major `n`-column buffer ← `(c·p − s·q, s·p + c·q)`.
#[inline]
fn rotate_rows(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = m.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Gauss-Jordan inverse with partial pivoting.
///
/// Rejects singular input and input whose 1-norm condition estimate exceeds
/// [`MAX_CONDITION`].
pub fn dense_inverse(s: &Matrix) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::dim(format!("inverse of {}x{}", s.rows, s.cols)));
    }
    let n = s.rows;
    let mut a = s.clone();
    let mut inv = Matrix::identity(n);
    let scale = s.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Numerical("singular matrix".into()));
    }

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
            .expect("non-empty range");
        let pivot = a.get(pivot_row, col);
        if pivot.abs() <= f64::EPSILON * scale * n as f64 {
            return Err(Error::Numerical("singular matrix".into()));
        }
        if pivot_row != col {
            for k in 0..n {
                a.data.swap(pivot_row * n + k, col * n + k);
                inv.data.swap(pivot_row * n + k, col * n + k);
            }
        }
        let inv_pivot = 1.0 / pivot;
        for k in 0..n {
            a.data[col * n + k] *= inv_pivot;
            inv.data[col * n + k] *= inv_pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a.data[r * n + k] -= f * a.data[col * n + k];
                inv.data[r * n + k] -= f * inv.data[col * n + k];
            }
        }
    }

    let cond = s.one_norm() * inv.one_norm();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::Numerical(format!(
            "ill-conditioned matrix (condition estimate {cond:.3e})"
        )));
    }
    Ok(inv)
}
