//! Dense row-major matrices and nonnegative marginal vectors.
//!
//! Every solver in the crate consumes and produces [`DenseMatrix`]. The type
//! keeps its buffer private so the finiteness invariant holds after
//! construction; solver internals that need raw speed work on `Vec<f64>`
//! scratch space and wrap the result at the end.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular matrix of finite `f64` values stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at ({}, {})",
                values[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows.saturating_mul(cols)])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.saturating_mul(cols));
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
            return Err(Error::dim(format!(
                "row {bad} has {} entries, expected {ncols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), ncols, rows.concat())
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &[f64], b: &[f64]) -> Result<Self> {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
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
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        Self { rows: self.cols, cols: self.rows, values: out }
    }

    /// Frobenius inner product `⟨A, B⟩`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other, "inner product")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "elementwise product")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Self::new(self.rows, self.cols, values)
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = vec![0.0; self.rows * n];
        for (i, out_row) in out.chunks_exact_mut(n).enumerate() {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Self::new(self.rows, n, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other, "comparison")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (i + 1..self.cols).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub(crate) fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{what} needs equal shapes, got {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// How row reductions are scheduled inside the solvers.
///
/// Each output entry of a matrix-vector product is always accumulated
/// sequentially, so both modes produce identical bits; `Parallel` only
/// spreads rows over the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExecMode {
    #[default]
    Deterministic,
    Parallel,
}

/// `out[i] = Σ_j m[i, j] · x[j]` for a row-major `rows × x.len()` buffer.
pub(crate) fn matvec(m: &[f64], x: &[f64], out: &mut [f64], mode: ExecMode) {
    let cols = x.len();
    let row_dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    match mode {
        ExecMode::Deterministic => {
            for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
                *o = row_dot(row);
            }
        }
        ExecMode::Parallel => {
            out.par_iter_mut()
                .zip(m.par_chunks_exact(cols))
                .for_each(|(o, row)| *o = row_dot(row));
        }
    }
}

/// Nonnegative weight vector with its cached total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    entries: Vec<f64>,
    mass: f64,
}

impl Marginal {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("marginal must have at least one entry"));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "marginal entry {pos} is {}, must be finite and nonnegative",
                entries[pos]
            )));
        }
        let mass = entries.iter().sum();
        Ok(Self { entries, mass })
    }

    /// `len` entries each equal to `mass / len`.
    pub fn uniform(len: usize, mass: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("marginal must have at least one entry"));
        }
        Self::new(vec![mass / len as f64; len])
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn has_zero(&self) -> bool {
        self.entries.contains(&0.0)
    }
}
