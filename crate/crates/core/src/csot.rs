//! Structure-aware curriculum OT.
//!
//! The objective is
//!
//! ```text
//! ⟨C, Q⟩ + κ (Ω_P(Q) + Ω_L(Q)) + ε ⟨Q, log Q⟩,   Q ∈ {Q1 ≤ α, Qᵀ1 = β}
//! ```
//!
//! with `Ω_P(Q) = −⟨S, (P⊙Q)(P⊙Q)ᵀ⟩` and `Ω_L` the same with the one-hot
//! label matrix `L`. The quadratic terms make it nonconvex, so it is solved
//! by generalized conditional gradient: linearize everything except the
//! entropy, solve the resulting entropic curriculum OT with the scaling
//! iteration, and take an Armijo step toward it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curriculum::cot_esi_scaling;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::problem::{neg_entropy, ConstraintKind, SolveReport, StructureContext, TransportProblem};
use crate::sinkhorn::{ScalingOptions, DEFAULT_FEASIBILITY_TOL};

fn check_dims(q: &DenseMatrix, ctx: &StructureContext) -> Result<()> {
    if q.shape() != ctx.predictions().shape() {
        return Err(Error::dim(format!(
            "coupling is {}x{} but predictions are {}x{}",
            q.rows(),
            q.cols(),
            ctx.predictions().rows(),
            ctx.predictions().cols()
        )));
    }
    Ok(())
}

/// `−⟨S, XXᵀ⟩ = −⟨X, SX⟩` for `X = W ⊙ Q`; also returns `SX`.
fn quadratic_term(q: &DenseMatrix, weights: &DenseMatrix, s: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let x = weights.hadamard(q)?;
    let sx = s.matmul(&x)?;
    Ok((-x.dot(&sx)?, sx))
}

pub fn omega_p(q: &DenseMatrix, ctx: &StructureContext) -> Result<f64> {
    check_dims(q, ctx)?;
    Ok(quadratic_term(q, ctx.predictions(), ctx.similarity())?.0)
}

pub fn omega_l(q: &DenseMatrix, ctx: &StructureContext) -> Result<f64> {
    check_dims(q, ctx)?;
    Ok(quadratic_term(q, ctx.labels(), ctx.similarity())?.0)
}

/// Value and gradient of `Ω_P + Ω_L`. The gradient
/// `−2 [P ⊙ S(P⊙Q) + L ⊙ S(L⊙Q)]` relies on `S` being symmetric, which
/// [`StructureContext`] enforces.
pub fn omega_with_grad(q: &DenseMatrix, ctx: &StructureContext) -> Result<(f64, DenseMatrix)> {
    check_dims(q, ctx)?;
    let (p, l) = (ctx.predictions(), ctx.labels());
    let (vp, sxp) = quadratic_term(q, p, ctx.similarity())?;
    let (vl, sxl) = quadratic_term(q, l, ctx.similarity())?;
    let grad: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(sxp.as_slice())
        .zip(l.as_slice().iter().zip(sxl.as_slice()))
        .map(|((pi, a), (li, b))| -2.0 * (pi * a + li * b))
        .collect();
    Ok((vp + vl, DenseMatrix::new(q.rows(), q.cols(), grad)?))
}

pub fn grad_omega(q: &DenseMatrix, ctx: &StructureContext) -> Result<DenseMatrix> {
    Ok(omega_with_grad(q, ctx)?.1)
}

fn check_problem(problem: &TransportProblem, ctx: &StructureContext) -> Result<()> {
    if problem.shape() != ctx.predictions().shape() {
        return Err(Error::dim(format!(
            "cost is {}x{} but predictions are {}x{}",
            problem.shape().0,
            problem.shape().1,
            ctx.predictions().rows(),
            ctx.predictions().cols()
        )));
    }
    Ok(())
}

/// `⟨C, Q⟩ + κ Ω(Q) + ε ⟨Q, log Q⟩` with `0·log 0 = 0`.
pub fn csot_objective(q: &DenseMatrix, problem: &TransportProblem, ctx: &StructureContext) -> Result<f64> {
    check_problem(problem, ctx)?;
    check_dims(q, ctx)?;
    if let Some(pos) = q.as_slice().iter().position(|&v| v < 0.0) {
        return Err(Error::invalid(format!("coupling entry {pos} is negative")));
    }
    let omega = if ctx.kappa() == 0.0 {
        0.0
    } else {
        omega_p(q, ctx)? + omega_l(q, ctx)?
    };
    Ok(problem.cost().dot(q)? + ctx.kappa() * omega + problem.epsilon() * neg_entropy(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcgConfig {
    pub outer_iters: usize,
    /// Options for the inner curriculum OT solves.
    pub inner: ScalingOptions,
    pub armijo_c1: f64,
    pub armijo_shrink: f64,
    pub armijo_max_backtracks: usize,
    /// Reuse the previous inner `v` as the starting point of the next solve.
    pub warm_start: bool,
    /// `converged` additionally requires the last objective change to be
    /// at most this.
    pub objective_tol: f64,
    /// Largest marginal violation accepted from an inner solve, as a
    /// fraction of the smallest marginal entry.
    pub inner_feasibility_limit: f64,
}

impl Default for GcgConfig {
    fn default() -> Self {
        Self {
            outer_iters: 10,
            inner: ScalingOptions::default(),
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            armijo_max_backtracks: 30,
            warm_start: false,
            objective_tol: 1e-6,
            inner_feasibility_limit: 0.05,
        }
    }
}

impl GcgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::invalid("outer_iters must be at least 1"));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(Error::invalid(format!("armijo_shrink must lie in (0, 1), got {}", self.armijo_shrink)));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::invalid(format!("armijo_c1 must lie in (0, 1), got {}", self.armijo_c1)));
        }
        if self.inner.iters == 0 {
            return Err(Error::invalid("inner iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Iterate of the conditional gradient loop.
#[derive(Debug, Clone)]
pub struct GcgState {
    pub q: DenseMatrix,
    /// Linearization `C + κ∇Ω(Q)` from the last step.
    pub g: Option<DenseMatrix>,
    /// Inner solution from the last step.
    pub q_tilde: Option<DenseMatrix>,
    pub eta: f64,
    pub objective: f64,
}

/// Outcome of a single outer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Armijo accepted `eta` after `backtracks` reductions.
    Moved { eta: f64, backtracks: usize },
    /// The direction is not a descent direction; `Q` is stationary.
    Stationary,
    /// The line search ran out of backtracks and took a zero step.
    Stalled,
}

pub struct GcgSolver<'a> {
    problem: &'a TransportProblem,
    ctx: &'a StructureContext,
    config: GcgConfig,
    state: GcgState,
    warm_v: Option<Vec<f64>>,
}

impl<'a> GcgSolver<'a> {
    /// Starts from `Q = αβᵀ`.
    pub fn new(problem: &'a TransportProblem, ctx: &'a StructureContext, config: GcgConfig) -> Result<Self> {
        config.validate()?;
        problem.require_kind(ConstraintKind::CurriculumRowInequality, "CSOT")?;
        check_problem(problem, ctx)?;
        let q = DenseMatrix::outer(problem.row_marginal().entries(), problem.col_marginal().entries())?;
        let objective = csot_objective(&q, problem, ctx)?;
        Ok(Self {
            problem,
            ctx,
            config,
            state: GcgState { q, g: None, q_tilde: None, eta: 0.0, objective },
            warm_v: None,
        })
    }

    pub fn state(&self) -> &GcgState {
        &self.state
    }

    pub fn into_state(self) -> GcgState {
        self.state
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let (problem, ctx, cfg) = (self.problem, self.ctx, self.config);
        let eps = problem.epsilon();
        let q = &self.state.q;

        let g = if ctx.kappa() == 0.0 {
            problem.cost().clone()
        } else {
            let grad = grad_omega(q, ctx)?;
            let g: Vec<f64> = problem
                .cost()
                .as_slice()
                .iter()
                .zip(grad.as_slice())
                .map(|(c, d)| c + ctx.kappa() * d)
                .collect();
            DenseMatrix::new(q.rows(), q.cols(), g)?
        };

        let linearized = problem.with_cost(g.clone())?;
        let warm = if cfg.warm_start { self.warm_v.take() } else { None };
        let (scaling, _) = cot_esi_scaling(&linearized, &cfg.inner, warm)?;
        let q_tilde = scaling.coupling()?;
        let (row_res, col_res) = (problem.row_residual(&q_tilde), problem.col_residual(&q_tilde));
        let smallest = problem
            .row_marginal()
            .entries()
            .iter()
            .chain(problem.col_marginal().entries())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let limit = cfg.inner_feasibility_limit * smallest;
        if !(row_res <= limit && col_res <= limit) {
            return Err(Error::Internal(format!(
                "inner solve left residuals row {row_res:e}, column {col_res:e}; increase inner iterations"
            )));
        }
        if cfg.warm_start {
            self.warm_v = Some(scaling.v);
        }

        // Directional derivative of the full objective along Q̃ − Q. Entries
        // with Q = 0 < Q̃ have slope −∞ in the entropy and only help; they are
        // left out of the sum.
        let slope: f64 = q
            .as_slice()
            .iter()
            .zip(q_tilde.as_slice())
            .zip(g.as_slice())
            .filter(|((&x, _), _)| x > 0.0)
            .map(|((&x, &y), &gij)| (gij + eps * (x.ln() + 1.0)) * (y - x))
            .sum();

        let f0 = self.state.objective;
        let mut outcome = StepOutcome::Stationary;
        let mut accepted = None;
        if slope < 0.0 {
            let mut eta = 1.0;
            outcome = StepOutcome::Stalled;
            for backtracks in 0..=cfg.armijo_max_backtracks {
                let candidate = combine(q, &q_tilde, eta)?;
                let f = csot_objective(&candidate, problem, ctx)?;
                if f <= f0 + cfg.armijo_c1 * eta * slope {
                    outcome = StepOutcome::Moved { eta, backtracks };
                    accepted = Some((candidate, f, eta));
                    break;
                }
                eta *= cfg.armijo_shrink;
            }
        }

        match accepted {
            Some((next, f, eta)) => {
                self.state.q = next;
                self.state.objective = f;
                self.state.eta = eta;
            }
            None => self.state.eta = 0.0,
        }
        self.state.g = Some(g);
        self.state.q_tilde = Some(q_tilde);
        Ok(outcome)
    }
}

/// `(1 − η) A + η B`.
fn combine(a: &DenseMatrix, b: &DenseMatrix, eta: f64) -> Result<DenseMatrix> {
    let values = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (1.0 - eta) * x + eta * y).collect();
    DenseMatrix::new(a.rows(), a.cols(), values)
}

/// Runs `config.outer_iters` conditional gradient steps from `αβᵀ`.
///
/// The report's objective trace starts with the initial objective, so it
/// has `outer_iters + 1` entries and is non-increasing.
pub fn solve_csot_gcg(
    problem: &TransportProblem,
    ctx: &StructureContext,
    config: &GcgConfig,
) -> Result<(DenseMatrix, SolveReport)> {
    let started = Instant::now();
    let mut solver = GcgSolver::new(problem, ctx, *config)?;
    let mut trace = vec![solver.state().objective];
    let mut stalled_steps = 0;
    for _ in 0..config.outer_iters {
        if solver.step()? == StepOutcome::Stalled {
            stalled_steps += 1;
        }
        trace.push(solver.state().objective);
    }
    let q = solver.into_state().q;
    let row_residual = problem.row_residual(&q);
    let col_residual = problem.col_residual(&q);
    let last_change = trace.windows(2).last().map_or(0.0, |w| (w[1] - w[0]).abs());
    let converged = row_residual <= DEFAULT_FEASIBILITY_TOL
        && col_residual <= DEFAULT_FEASIBILITY_TOL
        && last_change <= config.objective_tol;
    let report = SolveReport {
        iterations: config.outer_iters,
        objective_trace: trace,
        row_residual,
        col_residual,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        converged,
        stalled_steps,
    };
    Ok((q, report))
}
