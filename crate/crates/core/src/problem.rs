//! Problem descriptions shared by every solver, plus the per-solve report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Marginal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `Q1 = α`, `Qᵀ1 = β`.
    Equality,
    /// `Q1 ≤ α`, `Qᵀ1 = β`, with `‖α‖₁ ≥ ‖β‖₁`.
    CurriculumRowInequality,
}

/// Relative tolerance used when comparing marginal masses.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    cost: DenseMatrix,
    row_marginal: Marginal,
    col_marginal: Marginal,
    epsilon: f64,
    kind: ConstraintKind,
}

impl TransportProblem {
    pub fn new(
        cost: DenseMatrix,
        row_marginal: Marginal,
        col_marginal: Marginal,
        epsilon: f64,
        kind: ConstraintKind,
    ) -> Result<Self> {
        if cost.rows() != row_marginal.len() || cost.cols() != col_marginal.len() {
            return Err(Error::dim(format!(
                "cost is {}x{} but marginals have lengths {} and {}",
                cost.rows(),
                cost.cols(),
                row_marginal.len(),
                col_marginal.len()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let (a, b) = (row_marginal.mass(), col_marginal.mass());
        let slack = MASS_TOL * a.max(b).max(1.0);
        match kind {
            ConstraintKind::Equality if (a - b).abs() > slack => {
                return Err(Error::invalid(format!(
                    "equality constraints need equal masses, got {a} and {b}"
                )))
            }
            ConstraintKind::CurriculumRowInequality if a + slack < b => {
                return Err(Error::invalid(format!(
                    "curriculum constraints need row mass >= column mass, got {a} < {b}"
                )))
            }
            _ => {}
        }
        Ok(Self { cost, row_marginal, col_marginal, epsilon, kind })
    }

    /// Uniform rows `α = (1/B)·1` and columns `β = (m/C)·1`, the allocation
    /// used for pseudo-labeling a batch.
    pub fn curriculum_uniform(cost: DenseMatrix, budget: f64, epsilon: f64) -> Result<Self> {
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(Error::invalid(format!("budget must lie in (0, 1], got {budget}")));
        }
        let alpha = Marginal::uniform(cost.rows(), 1.0)?;
        let beta = Marginal::uniform(cost.cols(), budget)?;
        Self::new(cost, alpha, beta, epsilon, ConstraintKind::CurriculumRowInequality)
    }

    pub fn cost(&self) -> &DenseMatrix {
        &self.cost
    }

    pub fn row_marginal(&self) -> &Marginal {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Marginal {
        &self.col_marginal
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.cost.shape()
    }

    /// Same marginals and constraint kind with a different cost matrix.
    pub fn with_cost(&self, cost: DenseMatrix) -> Result<Self> {
        Self::new(cost, self.row_marginal.clone(), self.col_marginal.clone(), self.epsilon, self.kind)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.cost.clone(), self.row_marginal.clone(), self.col_marginal.clone(), epsilon, self.kind)
    }

    pub(crate) fn require_kind(&self, kind: ConstraintKind, solver: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!("{solver} needs {kind:?} constraints, got {:?}", self.kind)));
        }
        Ok(())
    }

    /// Row violation for this problem's constraint kind: two-sided for
    /// equality, `max_i max(0, (Q1)_i − α_i)` for the curriculum polytope.
    pub fn row_residual(&self, q: &DenseMatrix) -> f64 {
        let alpha = self.row_marginal.entries();
        let sums = q.row_sums();
        let viol = sums.iter().zip(alpha).map(|(s, a)| match self.kind {
            ConstraintKind::Equality => (s - a).abs(),
            ConstraintKind::CurriculumRowInequality => (s - a).max(0.0),
        });
        viol.fold(0.0, f64::max)
    }

    /// `‖Qᵀ1 − β‖∞`.
    pub fn col_residual(&self, q: &DenseMatrix) -> f64 {
        q.col_sums()
            .iter()
            .zip(self.col_marginal.entries())
            .map(|(s, b)| (s - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `⟨Q, log Q⟩` with `0·log 0 = 0`.
pub fn neg_entropy(q: &DenseMatrix) -> f64 {
    q.as_slice().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// Entropic transport objective `⟨C, Q⟩ + ε⟨Q, log Q⟩`.
pub fn entropic_objective(problem: &TransportProblem, q: &DenseMatrix) -> Result<f64> {
    Ok(problem.cost().dot(q)? + problem.epsilon() * neg_entropy(q))
}

/// Similarity, predictions, and one-hot labels for the structure terms.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureContext {
    similarity: DenseMatrix,
    predictions: DenseMatrix,
    labels: DenseMatrix,
    kappa: f64,
}

impl StructureContext {
    pub fn new(similarity: DenseMatrix, predictions: DenseMatrix, labels: DenseMatrix, kappa: f64) -> Result<Self> {
        let b = predictions.rows();
        if similarity.shape() != (b, b) {
            return Err(Error::dim(format!(
                "similarity must be {b}x{b}, got {}x{}",
                similarity.rows(),
                similarity.cols()
            )));
        }
        if labels.shape() != predictions.shape() {
            return Err(Error::dim(format!(
                "labels are {}x{} but predictions are {}x{}",
                labels.rows(),
                labels.cols(),
                predictions.rows(),
                predictions.cols()
            )));
        }
        if !similarity.is_symmetric(1e-12) {
            return Err(Error::invalid("similarity matrix is not symmetric"));
        }
        if similarity.as_slice().iter().any(|v| v.abs() > 1.0) {
            return Err(Error::invalid("similarity entries must lie in [-1, 1]"));
        }
        for i in 0..b {
            let row = predictions.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("prediction row {i} is not on the simplex (sum {sum})")));
            }
            let l = labels.row(i);
            let ones = l.iter().filter(|&&v| v == 1.0).count();
            let zeros = l.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != l.len() {
                return Err(Error::invalid(format!("label row {i} is not one-hot")));
            }
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be nonnegative, got {kappa}")));
        }
        Ok(Self { similarity, predictions, labels, kappa })
    }

    pub fn similarity(&self) -> &DenseMatrix {
        &self.similarity
    }

    pub fn predictions(&self) -> &DenseMatrix {
        &self.predictions
    }

    pub fn labels(&self) -> &DenseMatrix {
        &self.labels
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.similarity.clone(), self.predictions.clone(), self.labels.clone(), kappa)
    }
}

/// Diagnostics returned alongside every coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub row_residual: f64,
    pub col_residual: f64,
    pub wall_time_ms: f64,
    pub converged: bool,
    /// Outer steps whose line search gave up and took a zero step.
    #[serde(default)]
    pub stalled_steps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost(r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::zeros(r, c).unwrap()
    }

    #[test]
    fn problem_validation() {
        let a = Marginal::uniform(3, 1.0).unwrap();
        let b = Marginal::uniform(2, 0.5).unwrap();
        assert!(matches!(
            TransportProblem::new(cost(2, 2), a.clone(), b.clone(), 0.1, ConstraintKind::Equality),
            Err(Error::Dimension(_))
        ));
        assert!(TransportProblem::new(cost(3, 2), a.clone(), b.clone(), 0.1, ConstraintKind::Equality).is_err());
        assert!(TransportProblem::new(cost(3, 2), a.clone(), b.clone(), 0.0, ConstraintKind::CurriculumRowInequality).is_err());
        assert!(TransportProblem::new(cost(3, 2), b.clone(), a.clone(), 0.1, ConstraintKind::CurriculumRowInequality).is_err());
        let p = TransportProblem::new(cost(3, 2), a, b, 0.1, ConstraintKind::CurriculumRowInequality).unwrap();
        assert_eq!(p.shape(), (3, 2));
    }

    #[test]
    fn residuals_follow_constraint_kind() {
        let p = TransportProblem::curriculum_uniform(cost(2, 2), 0.5, 0.1).unwrap();
        let q = DenseMatrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]]).unwrap();
        // row 0 exceeds α = 0.5 by nothing, row 1 is under: one-sided residual is zero
        assert_eq!(p.row_residual(&q), 0.0);
        assert!((p.col_residual(&q) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn context_rejects_asymmetric_similarity() {
        let s = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        let p = DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let l = DenseMatrix::identity(2).unwrap();
        assert!(StructureContext::new(s, p, l, 1.0).is_err());
    }
}
