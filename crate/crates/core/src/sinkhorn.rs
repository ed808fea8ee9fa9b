//! Entropic optimal transport by Sinkhorn scaling.
//!
//! The kernel `K = exp(−C/ε)` is scaled as `diag(u) K diag(v)`. Rows and
//! columns of `K` are pre-divided by `α` and `β` so each half-step divides a
//! ones vector, and the hot loop is two matrix-vector products. The curriculum
//! solver in [`crate::curriculum`] reuses the same kernel with a clamped row
//! update.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{matvec, DenseMatrix, ExecMode};
use crate::problem::{entropic_objective, ConstraintKind, SolveReport, TransportProblem};

pub const DEFAULT_ITERS: usize = 100;
/// Feasibility threshold for `converged` when no explicit tolerance is given.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;
const CHECK_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// Iteration count in fixed mode, iteration cap when `tol` is set.
    pub iters: usize,
    /// Stop early once both marginal residuals are at most `tol`.
    pub tol: Option<f64>,
    pub mode: ExecMode,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self { iters: DEFAULT_ITERS, tol: None, mode: ExecMode::Deterministic }
    }
}

impl ScalingOptions {
    pub fn fixed(iters: usize) -> Self {
        Self { iters, ..Self::default() }
    }

    pub fn until(tol: f64, max_iters: usize) -> Self {
        Self { iters: max_iters, tol: Some(tol), ..Self::default() }
    }

    fn feasibility_tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_FEASIBILITY_TOL)
    }
}

/// Scaling vectors plus the kernel they act on.
#[derive(Debug, Clone)]
pub struct ScalingState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub kernel: DenseMatrix,
}

impl ScalingState {
    pub fn coupling(&self) -> Result<DenseMatrix> {
        let cols = self.kernel.cols();
        let values = self
            .kernel
            .as_slice()
            .chunks_exact(cols)
            .zip(&self.u)
            .flat_map(|(row, &ui)| row.iter().zip(&self.v).map(move |(k, vj)| ui * k * vj))
            .collect();
        DenseMatrix::new(self.kernel.rows(), cols, values)
    }
}

pub fn gibbs_kernel(cost: &DenseMatrix, epsilon: f64) -> Result<DenseMatrix> {
    let k = cost.map(|c| (-c / epsilon).exp())?;
    if let Some(i) = k.row_sums().iter().position(|&s| s == 0.0) {
        return Err(Error::Numerical(format!(
            "kernel row {i} underflowed to zero at epsilon = {epsilon}; use a larger epsilon"
        )));
    }
    if let Some(j) = k.col_sums().iter().position(|&s| s == 0.0) {
        return Err(Error::Numerical(format!(
            "kernel column {j} underflowed to zero at epsilon = {epsilon}; use a larger epsilon"
        )));
    }
    Ok(k)
}

/// Row update rule distinguishing Sinkhorn from the curriculum iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowUpdate {
    Exact,
    ClampedAtOne,
}

/// `K` together with `K_α = K / α` (row-major) and `K_βᵀ = Kᵀ / β` (row-major,
/// one row per column of `K`).
pub(crate) struct ScaledKernel {
    pub(crate) kernel: DenseMatrix,
    k_alpha: Vec<f64>,
    k_beta_t: Vec<f64>,
}

impl ScaledKernel {
    pub(crate) fn new(problem: &TransportProblem) -> Result<Self> {
        let alpha = problem.row_marginal();
        let beta = problem.col_marginal();
        if alpha.has_zero() || beta.has_zero() {
            return Err(Error::invalid("marginals must be strictly positive for scaling iterations"));
        }
        let kernel = gibbs_kernel(problem.cost(), problem.epsilon())?;
        let (rows, cols) = kernel.shape();
        let (a, b) = (alpha.entries(), beta.entries());
        let mut k_alpha = Vec::with_capacity(rows * cols);
        let mut k_beta_t = vec![0.0; rows * cols];
        for i in 0..rows {
            for (j, &k) in kernel.row(i).iter().enumerate() {
                k_alpha.push(k / a[i]);
                k_beta_t[j * rows + i] = k / b[j];
            }
        }
        Ok(Self { kernel, k_alpha, k_beta_t })
    }

    /// Runs the scaling recursion from `v` and returns the final state.
    pub(crate) fn iterate(
        self,
        problem: &TransportProblem,
        v0: Option<Vec<f64>>,
        rule: RowUpdate,
        opts: &ScalingOptions,
    ) -> Result<(ScalingState, usize)> {
        let (rows, cols) = self.kernel.shape();
        let mut u = vec![1.0; rows];
        let mut v = v0.unwrap_or_else(|| vec![1.0; cols]);
        if v.len() != cols {
            return Err(Error::dim(format!("warm start has {} entries, expected {cols}", v.len())));
        }
        let mut kv = vec![0.0; rows];
        let mut ktu = vec![0.0; cols];
        let mut done = 0;
        for n in 1..=opts.iters {
            matvec(&self.k_alpha, &v, &mut kv, opts.mode);
            for (ui, &s) in u.iter_mut().zip(&kv) {
                *ui = match rule {
                    RowUpdate::Exact => 1.0 / s,
                    RowUpdate::ClampedAtOne => (1.0 / s).min(1.0),
                };
            }
            check_finite(&u, "u", n, problem.epsilon())?;
            matvec(&self.k_beta_t, &u, &mut ktu, opts.mode);
            for (vj, &s) in v.iter_mut().zip(&ktu) {
                *vj = 1.0 / s;
            }
            check_finite(&v, "v", n, problem.epsilon())?;
            done = n;
            if let Some(tol) = opts.tol {
                if n % CHECK_EVERY == 0 && self.residuals(problem, &u, &v, opts.mode) <= tol {
                    break;
                }
            }
        }
        Ok((ScalingState { u, v, kernel: self.kernel }, done))
    }

    /// Largest marginal violation computed from the scaling vectors alone.
    fn residuals(&self, problem: &TransportProblem, u: &[f64], v: &[f64], mode: ExecMode) -> f64 {
        let (rows, cols) = self.kernel.shape();
        let a = problem.row_marginal().entries();
        let b = problem.col_marginal().entries();
        let mut kv = vec![0.0; rows];
        let mut ktu = vec![0.0; cols];
        matvec(&self.k_alpha, v, &mut kv, mode);
        matvec(&self.k_beta_t, u, &mut ktu, mode);
        let row = (0..rows).map(|i| {
            let diff = u[i] * kv[i] * a[i] - a[i];
            match problem.kind() {
                ConstraintKind::Equality => diff.abs(),
                ConstraintKind::CurriculumRowInequality => diff.max(0.0),
            }
        });
        let col = (0..cols).map(|j| (v[j] * ktu[j] * b[j] - b[j]).abs());
        row.chain(col).fold(0.0, f64::max)
    }
}

fn check_finite(x: &[f64], name: &str, iter: usize, epsilon: f64) -> Result<()> {
    if let Some(i) = x.iter().position(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::Numerical(format!(
            "scaling vector {name}[{i}] = {} at iteration {iter} (epsilon = {epsilon}); use a larger epsilon",
            x[i]
        )));
    }
    Ok(())
}

/// Assembles the report for a finished scaling solve.
pub(crate) fn scaling_report(
    problem: &TransportProblem,
    q: &DenseMatrix,
    iterations: usize,
    opts: &ScalingOptions,
    started: Instant,
) -> Result<SolveReport> {
    let row_residual = problem.row_residual(q);
    let col_residual = problem.col_residual(q);
    let tol = opts.feasibility_tol();
    Ok(SolveReport {
        iterations,
        objective_trace: vec![entropic_objective(problem, q)?],
        row_residual,
        col_residual,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        converged: row_residual <= tol && col_residual <= tol,
        stalled_steps: 0,
    })
}

/// Entropic OT with equality marginals.
///
/// Running out of iterations is not an error: the last iterate comes back
/// with `converged = false`.
pub fn solve_sinkhorn(problem: &TransportProblem, opts: &ScalingOptions) -> Result<(DenseMatrix, SolveReport)> {
    problem.require_kind(ConstraintKind::Equality, "Sinkhorn")?;
    let started = Instant::now();
    let kernel = ScaledKernel::new(problem)?;
    let (state, iterations) = kernel.iterate(problem, None, RowUpdate::Exact, opts)?;
    let q = state.coupling()?;
    let report = scaling_report(problem, &q, iterations, opts, started)?;
    Ok((q, report))
}
