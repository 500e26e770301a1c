//! Dense linear algebra and fixed-step integration kernels.
//!
//! Everything here works on small dense matrices (order 6 for the arm, order
//! 1 in the scalar sanity problems) and is a pure function of its inputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Default absolute/relative tolerance used by [`sym_eigen`] callers.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_SWEEP_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix data has {got} entries, expected {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got: usize },
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    IterationLimit { sweeps: usize, off_norm: f64 },
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("non-finite derivative evaluation during integration")]
    Blowup,
}

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad shapes and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Row vector from a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
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

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise dimension mismatch"
        );
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
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

/// Square matrix stored in full, symmetric by construction.
#[derive(Clone, PartialEq, Debug)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    /// Symmetrizes `m` as (m + mᵀ)/2. The result is exactly symmetric.
    pub fn from_matrix(m: &Matrix) -> Result<Self, NumericsError> {
        if m.rows != m.cols {
            return Err(NumericsError::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        let n = m.rows;
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = m[(i, i)];
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        if !s.is_finite() {
            return Err(NumericsError::NonFinite { row: 0, col: 0 });
        }
        Ok(Self { inner: s })
    }

    /// Wraps full row-major storage, symmetrizing it.
    pub fn new(order: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::from_matrix(&Matrix::new(order, order, data)?)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Matrix::identity(n),
        }
    }

    pub fn order(&self) -> usize {
        self.inner.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            inner: self.inner.scale(s),
        }
    }

    /// xᵀ S x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.order();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.inner[(i, j)] * x[j];
            }
            acc += x[i] * row;
        }
        acc
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.inner[idx]
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, matching `values`.
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn max(&self) -> f64 {
        *self.values.last().expect("empty spectrum")
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over all off-diagonal pairs until the off-diagonal Frobenius norm
/// drops below `tol · ‖S‖_F`. Rotations whose pivot is already negligible
/// relative to its diagonal pair are skipped.
pub fn sym_eigen(s: &SymMatrix, tol: f64) -> Result<SymEigen, NumericsError> {
    assert!(tol > 0.0, "eigen tolerance must be positive");
    let n = s.order();
    let mut a = s.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let total = frobenius(&a);
    let threshold = tol * total;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= threshold || off == 0.0 {
            break;
        }
        if sweeps >= JACOBI_SWEEP_LIMIT {
            return Err(NumericsError::IterationLimit {
                sweeps,
                off_norm: off,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                if sweeps > 3 && apq.abs() * 1e18 < app.abs().min(aqq.abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn, t, apq);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

#[allow(clippy::too_many_arguments)]
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64, apq: f64) {
    let n = a.rows();
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let np = c * arp - s * arq;
        let nq = s * arp + c * arq;
        a[(r, p)] = np;
        a[(p, r)] = np;
        a[(r, q)] = nq;
        a[(q, r)] = nq;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

fn frobenius(a: &Matrix) -> f64 {
    a.data().iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Largest eigenvalue, the quantity every LMI margin is built from.
pub fn lambda_max(s: &SymMatrix) -> Result<f64, NumericsError> {
    Ok(sym_eigen(s, DEFAULT_EIGEN_TOL)?.max())
}

pub fn lambda_min(s: &SymMatrix) -> Result<f64, NumericsError> {
    Ok(sym_eigen(s, DEFAULT_EIGEN_TOL)?.min())
}

/// Lower-triangular Cholesky factor L with L·Lᵀ = S.
pub fn cholesky(s: &SymMatrix) -> Result<Matrix, NumericsError> {
    let n = s.order();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(NumericsError::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut acc = s[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Ok(l)
}

/// Solves S·X = rhs for positive definite S.
pub fn solve_spd(s: &SymMatrix, rhs: &Matrix) -> Result<Matrix, NumericsError> {
    if rhs.rows() != s.order() {
        return Err(NumericsError::Dimension(format!(
            "rhs has {} rows, matrix order is {}",
            rhs.rows(),
            s.order()
        )));
    }
    Ok(cholesky_solve(&cholesky(s)?, rhs))
}

/// Solves L·Lᵀ·X = rhs given the Cholesky factor L.
pub fn cholesky_solve(l: &Matrix, rhs: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = rhs.clone();
    for c in 0..rhs.cols() {
        // L y = b
        for i in 0..n {
            let mut acc = x[(i, c)];
            for k in 0..i {
                acc -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = acc / l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut acc = x[(i, c)];
            for k in (i + 1)..n {
                acc -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = acc / l[(i, i)];
        }
    }
    x
}

/// Inverse of a positive definite matrix, symmetrized.
pub fn inverse_spd(s: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let inv = solve_spd(s, &Matrix::identity(s.order()))?;
    SymMatrix::from_matrix(&inv)
}

/// One classical fourth-order Runge–Kutta step of size `h`.
pub fn rk4_step<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    debug_assert!(h > 0.0);
    let mut eval = |y: &[f64]| -> Result<Vec<f64>, NumericsError> {
        let d = f(y);
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(NumericsError::Blowup)
        }
    };
    let axpy = |a: f64, d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(xi, di)| xi + a * di).collect() };

    let k1 = eval(x)?;
    let k2 = eval(&axpy(0.5 * h, &k1))?;
    let k3 = eval(&axpy(0.5 * h, &k2))?;
    let k4 = eval(&axpy(h, &k3))?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(NumericsError::Blowup)
    }
}
