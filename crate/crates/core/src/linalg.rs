//! Dense row-major `f64` matrices.
//!
//! Only what the propagation pipeline needs: products (backed by the
//! `matrixmultiply` GEMM kernel and split over output rows), Kronecker
//! products, row normalization, column-stacking vectorization and a
//! partial-pivot dense solver for the small oracle systems.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Output rows handed to one GEMM call when the product is split.
const GEMM_ROW_BLOCK: usize = 64;

/// Pivots with magnitude below this are treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Wraps row-major `data`. Rejects length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::capacity("Matrix::new", format!("{rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols} needs {expected} values, got {}", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(
                "Matrix::new",
                format!("non-finite value at ({}, {})", pos / cols, pos % cols),
            ));
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                format!("row {bad} has {} values, expected {cols}", rows[bad].len()),
            ));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), 1, values)
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

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Copy of rows `r0..r1` and columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Matrix {
        assert!(r0 <= r1 && r1 <= self.rows && c0 <= c1 && c1 <= self.cols);
        Matrix::from_fn(r1 - r0, c1 - c0, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Matrix) -> Result<Matrix> {
        same_shape("add_scaled", self, other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!(
                    "{}x{} times vector of length {}",
                    self.rows,
                    self.cols,
                    x.len()
                ),
            ));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `xᵀ * self` for a row vector `x`, accumulated row by row.
    pub fn vecmat(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::shape(
                "vecmat",
                format!(
                    "vector of length {} times {}x{}",
                    x.len(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        matmul_with(self, b, Execution::default())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    Ok(())
}

/// Operand layout for [`gemm_into`]: either the matrix as stored or its transpose.
#[derive(Clone, Copy)]
enum Op<'a> {
    N(&'a Matrix),
    T(&'a Matrix),
}

impl Op<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            Op::N(m) => (m.rows, m.cols),
            Op::T(m) => (m.cols, m.rows),
        }
    }

    /// (row stride, column stride) of the logical operand.
    fn strides(&self) -> (isize, isize) {
        match self {
            Op::N(m) => (m.cols as isize, 1),
            Op::T(m) => (1, m.cols as isize),
        }
    }

    fn data(&self) -> &[f64] {
        match self {
            Op::N(m) | Op::T(m) => &m.data,
        }
    }
}

/// `out = a * b`, splitting `out` into row blocks.
fn gemm_into(exec: Execution, a: Op<'_>, b: Op<'_>, out: &mut Matrix) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.data.fill(0.0);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let a_data = a.data();
    let b_data = b.data();
    let block = if exec.is_parallel() {
        GEMM_ROW_BLOCK
    } else {
        m
    };
    exec::for_each_chunk_mut(exec, &mut out.data, block * n, |bi, c| {
        let r0 = bi * block;
        let h = c.len() / n;
        // SAFETY: rows r0..r0+h of `a` lie inside `a_data` for either stride
        // layout, `b_data` covers the full k x n operand, and `c` is exactly
        // h x n with row stride n.
        unsafe {
            matrixmultiply::dgemm(
                h,
                k,
                n,
                1.0,
                a_data.as_ptr().offset(r0 as isize * rsa),
                rsa,
                csa,
                b_data.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// Standard product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_with(a, b, Execution::default())
}

pub fn matmul_with(a: &Matrix, b: &Matrix, exec: Execution) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out, exec)?;
    Ok(out)
}

/// `out = a * b` into preallocated storage.
pub fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix, exec: Execution) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    if out.shape() != (a.rows, b.cols) {
        *out = Matrix::zeros(a.rows, b.cols);
    }
    gemm_into(exec, Op::N(a), Op::N(b), out);
    Ok(())
}

/// `out = a * bᵀ` without materializing the transpose.
pub fn matmul_transposed_into(
    a: &Matrix,
    b: &Matrix,
    out: &mut Matrix,
    exec: Execution,
) -> Result<()> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_transposed",
            format!("{}x{} times ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    if out.shape() != (a.rows, b.rows) {
        *out = Matrix::zeros(a.rows, b.rows);
    }
    gemm_into(exec, Op::N(a), Op::T(b), out);
    Ok(())
}

pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.rows, b.rows);
    matmul_transposed_into(a, b, &mut out, Execution::default())?;
    Ok(out)
}

/// Kronecker product: block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::shape(
            "kron",
            format!(
                "empty operand {}x{} ⊗ {}x{}",
                a.rows, a.cols, b.rows, b.cols
            ),
        ));
    }
    let too_big = || {
        Error::capacity(
            "kron",
            format!("{}x{} ⊗ {}x{} overflows", a.rows, a.cols, b.rows, b.cols),
        )
    };
    let rows = a.rows.checked_mul(b.rows).ok_or_else(too_big)?;
    let cols = a.cols.checked_mul(b.cols).ok_or_else(too_big)?;
    let len = rows.checked_mul(cols).ok_or_else(too_big)?;
    if len > isize::MAX as usize / std::mem::size_of::<f64>() {
        return Err(too_big());
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..a.rows {
        for k in 0..b.rows {
            let dst = out.row_mut(i * b.rows + k);
            for j in 0..a.cols {
                let aij = a[(i, j)];
                let brow = b.row(k);
                for (d, x) in dst[j * b.cols..(j + 1) * b.cols].iter_mut().zip(brow) {
                    *d = aij * x;
                }
            }
        }
    }
    Ok(out)
}

/// Scales every row to sum to one. An all-zero row becomes the uniform row
/// `1 / cols`, so the result is always row-stochastic.
pub fn row_normalize(m: &Matrix) -> Result<Matrix> {
    if let Some(pos) = m.data.iter().position(|x| x.is_nan() || *x < 0.0) {
        return Err(Error::domain(
            "row_normalize",
            format!(
                "entry ({}, {}) = {} is negative",
                pos / m.cols,
                pos % m.cols,
                m.data[pos]
            ),
        ));
    }
    let mut out = m.clone();
    let uniform = 1.0 / m.cols as f64;
    for i in 0..m.rows {
        let row = out.row_mut(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|x| *x /= sum);
        } else {
            row.fill(uniform);
        }
    }
    Ok(out)
}

/// Column-stacking vectorization: element `(k, i)` lands at `i * rows + k`.
pub fn vec(m: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(m.data.len());
    for j in 0..m.cols {
        data.extend((0..m.rows).map(|i| m[(i, j)]));
    }
    Matrix {
        rows: m.data.len(),
        cols: 1,
        data,
    }
}

/// Inverse of [`vec`]. Accepts a row or column vector of length `rows * cols`.
pub fn unvec(v: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
    if v.rows.min(v.cols) > 1 || v.data.len() != rows * cols {
        return Err(Error::shape(
            "unvec",
            format!("{}x{} cannot be reshaped to {rows}x{cols}", v.rows, v.cols),
        ));
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| v.data[j * rows + i]))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. `b` may
/// carry several right-hand sides as columns.
pub fn solve_dense(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::shape(
            "solve_dense",
            format!("coefficient matrix {}x{} is not square", a.rows, a.cols),
        ));
    }
    if b.rows != a.rows {
        return Err(Error::shape(
            "solve_dense",
            format!(
                "{}x{} system with {}x{} right-hand side",
                a.rows, a.cols, b.rows, b.cols
            ),
        ));
    }
    let n = a.rows;
    let m = b.cols;
    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        let (piv_row, piv) = (col..n)
            .map(|r| (r, lu[(r, col)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty pivot range");
        if piv.abs() < SINGULAR_PIVOT {
            return Err(Error::Singular {
                column: col,
                pivot: piv,
            });
        }
        if piv_row != col {
            for j in 0..n {
                lu.data.swap(col * n + j, piv_row * n + j);
            }
            for j in 0..m {
                x.data.swap(col * m + j, piv_row * m + j);
            }
        }
        for r in col + 1..n {
            let f = lu[(r, col)] / piv;
            if f == 0.0 {
                continue;
            }
            lu[(r, col)] = 0.0;
            for j in col + 1..n {
                lu[(r, j)] -= f * lu[(col, j)];
            }
            for j in 0..m {
                x[(r, j)] -= f * x[(col, j)];
            }
        }
    }

    for col in (0..n).rev() {
        let piv = lu[(col, col)];
        for j in 0..m {
            let mut s = x[(col, j)];
            for k in col + 1..n {
                s -= lu[(col, k)] * x[(k, j)];
            }
            x[(col, j)] = s / piv;
        }
    }
    Ok(x)
}
