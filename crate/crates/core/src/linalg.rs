//! Dense row-major matrices and the handful of kernels the rest of the crate
//! needs: products, Householder thin QR and one-sided Jacobi singular values.
//!
//! Everything is plain `f64` and single-threaded so that identical inputs give
//! identical bits.

use std::fmt;
use std::ops::Index;

use thiserror::Error;

/// Relative threshold on `|R[i][i]| / ‖m‖_F` below which thin QR reports rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// One-sided Jacobi stops rotating a pair once `|aᵢ·aⱼ| ≤ tol·‖aᵢ‖‖aⱼ‖`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Maximum number of full Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Singular values below this fraction of the largest are reported as zero.
pub const SINGULAR_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: invalid shape {shape:?} ({reason})")]
    Shape {
        op: &'static str,
        shape: (usize, usize),
        reason: &'static str,
    },

    #[error("matrix is rank deficient: |R[{column}][{column}]| = {diagonal:e} < {threshold:e}")]
    RankDeficient {
        column: usize,
        diagonal: f64,
        threshold: f64,
    },

    #[error("one-sided Jacobi did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("{op}: non-finite value at ({row}, {col})")]
    NonFinite {
        op: &'static str,
        row: usize,
        col: usize,
    },
}

/// A dense row-major matrix of finite `f64` values with positive dimensions.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Shape {
                op: "Matrix::new",
                shape: (rows, cols),
                reason: "dimensions must be positive",
            });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Shape {
                op: "Matrix::new",
                shape: (rows, cols),
                reason: "data length does not equal rows*cols",
            });
        }
        check_finite("Matrix::new", cols, &data)?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(LinalgError::Shape {
                op: "Matrix::from_rows",
                shape: (rows.len(), cols),
                reason: "ragged rows",
            });
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// The first `cols` columns of the `rows`×`rows` identity.
    pub fn identity_columns(rows: usize, cols: usize) -> Self {
        assert!(cols <= rows);
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..cols {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self, LinalgError> {
        let n = values.len();
        Matrix::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// Leading `n` columns.
    pub fn columns(&self, n: usize) -> Result<Matrix, LinalgError> {
        if n == 0 || n > self.cols {
            return Err(LinalgError::Shape {
                op: "Matrix::columns",
                shape: self.shape(),
                reason: "column count out of range",
            });
        }
        Matrix::from_fn(self.rows, n, |i, j| self.get(i, j))
    }

    /// Rows gathered by index, in the order given (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix, LinalgError> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.rows) {
            return Err(LinalgError::Shape {
                op: "Matrix::select_rows",
                shape: self.shape(),
                reason: "row index list empty or out of range",
            });
        }
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix, LinalgError> {
        let first = parts.first().ok_or(LinalgError::Shape {
            op: "Matrix::vstack",
            shape: (0, 0),
            reason: "nothing to stack",
        })?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != first.cols {
                return Err(LinalgError::DimensionMismatch {
                    op: "vstack",
                    left: first.shape(),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix {
            rows,
            cols: first.cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        assert!(start < end && end <= self.rows);
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn scale(&self, c: f64) -> Result<Matrix, LinalgError> {
        let data: Vec<f64> = self.data.iter().map(|x| x * c).collect();
        check_finite("scale", self.cols, &data)?;
        Ok(Matrix { data, ..*self })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// `self − c·other`.
    pub fn sub_scaled(&self, other: &Matrix, c: f64) -> Result<Matrix, LinalgError> {
        self.zip_with("sub_scaled", other, |a, b| a - c * b)
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite(op, self.cols, &data)?;
        Ok(Matrix { data, ..*self })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

fn check_finite(op: &'static str, cols: usize, data: &[f64]) -> Result<(), LinalgError> {
    match data.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(LinalgError::NonFinite {
            op,
            row: pos / cols.max(1),
            col: pos % cols.max(1),
        }),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, n) = (a.rows, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    check_finite("matmul", n, &out)?;
    Ok(Matrix {
        rows: m,
        cols: n,
        data: out,
    })
}

/// `aᵀ·b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul_tn",
            left: (a.cols, a.rows),
            right: b.shape(),
        });
    }
    let (m, n) = (a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for k in 0..a.rows {
        let b_row = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            for (o, &bkj) in out[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    check_finite("matmul_tn", n, &out)?;
    Ok(Matrix {
        rows: m,
        cols: n,
        data: out,
    })
}

/// `a·bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.cols {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: (b.cols, b.rows),
        });
    }
    let (m, n) = (a.rows, b.rows);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let a_row = a.row(i);
        for j in 0..n {
            out.push(dot(a_row, b.row(j)));
        }
    }
    check_finite("matmul_nt", n, &out)?;
    Ok(Matrix {
        rows: m,
        cols: n,
        data: out,
    })
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Thin QR factors: `q` is m×n with orthonormal columns, `r` is n×n upper
/// triangular with a nonnegative diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

/// Householder thin QR with the diagonal of `R` forced nonnegative, which makes
/// the factorization unique.
pub fn thin_qr(m: &Matrix) -> Result<QrFactors, LinalgError> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(LinalgError::Shape {
            op: "thin_qr",
            shape: m.shape(),
            reason: "thin QR needs rows >= cols",
        });
    }
    let threshold = RANK_TOLERANCE * frobenius_norm(m);

    // Work column-major: column j lives at a[j*rows..(j+1)*rows].
    let mut a = m.transpose().data;
    let mut taus = vec![0.0; cols];

    for j in 0..cols {
        let (done, rest) = a.split_at_mut((j + 1) * rows);
        let col = &mut done[j * rows..];
        let alpha = col[j];
        let tail_norm = col[j + 1..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if tail_norm == 0.0 {
            // Already reduced; H = I.
            taus[j] = 0.0;
        } else {
            let beta = -alpha.signum() * alpha.hypot(tail_norm);
            let tau = (beta - alpha) / beta;
            let scale = 1.0 / (alpha - beta);
            for x in &mut col[j + 1..] {
                *x *= scale;
            }
            col[j] = beta;
            taus[j] = tau;

            // Apply H = I - tau v vᵀ (v[j] = 1) to the remaining columns.
            let v_tail = &col[j + 1..];
            for other in rest.chunks_exact_mut(rows) {
                let w = other[j] + dot(v_tail, &other[j + 1..]);
                let tw = tau * w;
                other[j] -= tw;
                for (o, &v) in other[j + 1..].iter_mut().zip(v_tail) {
                    *o -= tw * v;
                }
            }
        }
        let diagonal = a[j * rows + j];
        if !(diagonal.abs() >= threshold) || threshold == 0.0 {
            return Err(LinalgError::RankDeficient {
                column: j,
                diagonal: diagonal.abs(),
                threshold,
            });
        }
    }

    let mut r = Matrix::zeros(cols, cols);
    for j in 0..cols {
        for i in 0..=j {
            r.data[i * cols + j] = a[j * rows + i];
        }
    }

    // Accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I,
    // column-major, back to front.
    let mut q = vec![0.0; rows * cols];
    for j in 0..cols {
        q[j * rows + j] = 1.0;
    }
    for j in (0..cols).rev() {
        let tau = taus[j];
        if tau == 0.0 {
            continue;
        }
        let v_tail = &a[j * rows + j + 1..(j + 1) * rows];
        for qc in q.chunks_exact_mut(rows).skip(j) {
            let w = qc[j] + dot(v_tail, &qc[j + 1..]);
            let tw = tau * w;
            qc[j] -= tw;
            for (o, &v) in qc[j + 1..].iter_mut().zip(v_tail) {
                *o -= tw * v;
            }
        }
    }

    // Sign convention: nonnegative diagonal of R.
    for j in 0..cols {
        if r.data[j * cols + j] < 0.0 {
            for x in &mut r.data[j * cols..(j + 1) * cols] {
                *x = -*x;
            }
            for x in &mut q[j * rows..(j + 1) * rows] {
                *x = -*x;
            }
        }
    }

    let q = Matrix {
        rows: cols,
        cols: rows,
        data: q,
    }
    .transpose();
    check_finite("thin_qr", cols, &q.data)?;
    check_finite("thin_qr", cols, &r.data)?;
    Ok(QrFactors { q, r })
}

/// Singular values in descending order; tiny values are clamped to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularValues {
    values: Vec<f64>,
}

impl SingularValues {
    /// Sorts descending and applies the clamp. Rejects negative or non-finite input.
    pub fn new(mut values: Vec<f64>) -> Result<Self, LinalgError> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(LinalgError::NonFinite {
                op: "SingularValues::new",
                row: 0,
                col: pos,
            });
        }
        values.sort_by(|a, b| b.total_cmp(a));
        if let Some(&largest) = values.first() {
            let cutoff = SINGULAR_CLAMP * largest;
            for v in &mut values {
                if *v < cutoff {
                    *v = 0.0;
                }
            }
        }
        Ok(SingularValues { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// One-sided (Hestenes) Jacobi on the narrower side of `m`.
pub fn singular_values(m: &Matrix) -> Result<SingularValues, LinalgError> {
    // Rows of `work` are the vectors being orthogonalized; there are k of them.
    let mut work = if m.rows >= m.cols {
        m.transpose()
    } else {
        m.clone()
    };
    let k = work.rows;
    let len = work.cols;

    let mut converged = k < 2;
    let mut residual = 0.0f64;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        converged = true;
        residual = 0.0;
        for p in 0..k - 1 {
            for q in p + 1..k {
                let (head, tail) = work.data.split_at_mut(q * len);
                let ap = &mut head[p * len..(p + 1) * len];
                let aq = &mut tail[..len];
                let alpha = dot(ap, ap);
                let beta = dot(aq, aq);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(ap, aq);
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(ratio);
                if ratio <= JACOBI_TOLERANCE {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps, residual });
    }

    let norms = (0..k)
        .map(|i| dot(work.row(i), work.row(i)).sqrt())
        .collect();
    SingularValues::new(norms)
}
