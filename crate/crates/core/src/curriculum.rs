//! Entropic curriculum OT over `{Q ≥ 0 : Q1 ≤ α, Qᵀ1 = β}`.
//!
//! Two solvers produce the same iterates. [`solve_cot_dykstra`] runs
//! Dykstra's alternating KL projections on dense matrices and is kept as the
//! reference. [`solve_cot_esi`] tracks only the scaling vectors `u`, `v` of
//! `Q = diag(u) K diag(v)`, with `u = min(α / Kv, 1)` and `v = β / Kᵀu`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Marginal};
use crate::problem::{ConstraintKind, SolveReport, TransportProblem};
use crate::sinkhorn::{gibbs_kernel, scaling_report, RowUpdate, ScaledKernel, ScalingOptions, ScalingState};

fn require_positive(m: &DenseMatrix) -> Result<()> {
    if let Some(pos) = m.as_slice().iter().position(|&v| v <= 0.0) {
        return Err(Error::invalid(format!(
            "KL projection needs a positive matrix, entry ({}, {}) is {}",
            pos / m.cols(),
            pos % m.cols(),
            m.as_slice()[pos]
        )));
    }
    Ok(())
}

/// Scales rows in place so that each row sum is at most `alpha[i]`.
fn clamp_rows(values: &mut [f64], cols: usize, alpha: &[f64]) -> Result<()> {
    for (i, (row, &a)) in values.chunks_exact_mut(cols).zip(alpha).enumerate() {
        let s: f64 = row.iter().sum();
        let scale = (a / s).min(1.0);
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Numerical(format!(
                "row {i} projection factor is {scale}; use a larger epsilon"
            )));
        }
        if scale < 1.0 {
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(())
}

/// Scales columns in place so that column sums equal `beta`.
fn match_cols(values: &mut [f64], cols: usize, beta: &[f64]) -> Result<()> {
    let mut sums = vec![0.0; cols];
    for row in values.chunks_exact(cols) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    for (j, (s, &b)) in sums.iter_mut().zip(beta).enumerate() {
        *s = b / *s;
        if !(s.is_finite() && *s > 0.0) {
            return Err(Error::Numerical(format!(
                "column {j} projection factor is {s}; use a larger epsilon"
            )));
        }
    }
    for row in values.chunks_exact_mut(cols) {
        for (v, s) in row.iter_mut().zip(&sums) {
            *v *= s;
        }
    }
    Ok(())
}

/// KL projection onto `{Q : Q1 ≤ α}`: `diag(min(α / M1, 1)) M`.
pub fn kl_project_row_inequality(m: &DenseMatrix, alpha: &Marginal) -> Result<DenseMatrix> {
    if alpha.len() != m.rows() {
        return Err(Error::dim(format!("alpha has {} entries for {} rows", alpha.len(), m.rows())));
    }
    require_positive(m)?;
    let mut values = m.as_slice().to_vec();
    clamp_rows(&mut values, m.cols(), alpha.entries())?;
    DenseMatrix::new(m.rows(), m.cols(), values)
}

/// KL projection onto `{Q : Qᵀ1 = β}`: `M diag(β / Mᵀ1)`.
pub fn kl_project_col_equality(m: &DenseMatrix, beta: &Marginal) -> Result<DenseMatrix> {
    if beta.len() != m.cols() {
        return Err(Error::dim(format!("beta has {} entries for {} columns", beta.len(), m.cols())));
    }
    if let Some(j) = m.col_sums().iter().position(|&s| s <= 0.0) {
        return Err(Error::invalid(format!("column {j} of the projected matrix sums to zero")));
    }
    require_positive(m)?;
    let mut values = m.as_slice().to_vec();
    match_cols(&mut values, m.cols(), beta.entries())?;
    DenseMatrix::new(m.rows(), m.cols(), values)
}

/// Full matrix state of Dykstra's algorithm for the two curriculum sets.
#[derive(Debug, Clone)]
pub struct DykstraState {
    rows: usize,
    cols: usize,
    q: Vec<f64>,
    q_prime: Vec<f64>,
    u: Vec<f64>,
    u_prime: Vec<f64>,
}

impl DykstraState {
    /// Starts from `Q = K`, `U = U′ = 1`.
    pub fn new(kernel: &DenseMatrix) -> Result<Self> {
        if kernel.as_slice().iter().any(|&k| k <= 0.0) {
            return Err(Error::Numerical(
                "kernel has entries that underflowed to zero; use a larger epsilon".into(),
            ));
        }
        let n = kernel.as_slice().len();
        Ok(Self {
            rows: kernel.rows(),
            cols: kernel.cols(),
            q: kernel.as_slice().to_vec(),
            q_prime: kernel.as_slice().to_vec(),
            u: vec![1.0; n],
            u_prime: vec![1.0; n],
        })
    }

    /// One sweep: project onto the row set, then onto the column set, each
    /// with its correction matrix.
    pub fn step(&mut self, alpha: &[f64], beta: &[f64]) -> Result<()> {
        // Q′ = P₁(Q ⊙ U′), U′ ← U′ ⊙ Q / Q′
        for ((qp, q), up) in self.q_prime.iter_mut().zip(&self.q).zip(&self.u_prime) {
            *qp = q * up;
        }
        clamp_rows(&mut self.q_prime, self.cols, alpha)?;
        for ((up, q), qp) in self.u_prime.iter_mut().zip(&self.q).zip(&self.q_prime) {
            *up *= q / qp;
        }
        // Q = P₂(Q′ ⊙ U), U ← U ⊙ Q′ / Q
        for ((q, qp), u) in self.q.iter_mut().zip(&self.q_prime).zip(&self.u) {
            *q = qp * u;
        }
        match_cols(&mut self.q, self.cols, beta)?;
        for ((u, qp), q) in self.u.iter_mut().zip(&self.q_prime).zip(&self.q) {
            *u *= qp / q;
        }
        if let Some(pos) = self.u.iter().chain(&self.u_prime).position(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::Numerical(format!(
                "Dykstra correction entry {pos} degenerated; use a larger epsilon"
            )));
        }
        Ok(())
    }

    pub fn q(&self) -> Result<DenseMatrix> {
        DenseMatrix::new(self.rows, self.cols, self.q.clone())
    }

    pub fn q_prime(&self) -> Result<DenseMatrix> {
        DenseMatrix::new(self.rows, self.cols, self.q_prime.clone())
    }

    pub fn corrections(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        Ok((
            DenseMatrix::new(self.rows, self.cols, self.u.clone())?,
            DenseMatrix::new(self.rows, self.cols, self.u_prime.clone())?,
        ))
    }

    fn into_q(self) -> Result<DenseMatrix> {
        DenseMatrix::new(self.rows, self.cols, self.q)
    }
}

fn check_curriculum(problem: &TransportProblem) -> Result<()> {
    problem.require_kind(ConstraintKind::CurriculumRowInequality, "curriculum OT")?;
    if problem.row_marginal().has_zero() || problem.col_marginal().has_zero() {
        return Err(Error::invalid("curriculum OT needs strictly positive marginals"));
    }
    Ok(())
}

/// Curriculum OT by `num_iters` sweeps of Dykstra's algorithm.
pub fn solve_cot_dykstra(problem: &TransportProblem, num_iters: usize) -> Result<(DenseMatrix, SolveReport)> {
    check_curriculum(problem)?;
    let started = Instant::now();
    let kernel = gibbs_kernel(problem.cost(), problem.epsilon())?;
    let mut state = DykstraState::new(&kernel)?;
    let (alpha, beta) = (problem.row_marginal().entries(), problem.col_marginal().entries());
    for _ in 0..num_iters {
        state.step(alpha, beta)?;
    }
    let q = state.into_q()?;
    let report = scaling_report(problem, &q, num_iters, &ScalingOptions::fixed(num_iters), started)?;
    Ok((q, report))
}

/// Scaling vectors of the curriculum iteration, optionally warm-started
/// from a previous `v`.
pub fn cot_esi_scaling(
    problem: &TransportProblem,
    opts: &ScalingOptions,
    warm_v: Option<Vec<f64>>,
) -> Result<(ScalingState, usize)> {
    check_curriculum(problem)?;
    ScaledKernel::new(problem)?.iterate(problem, warm_v, RowUpdate::ClampedAtOne, opts)
}

/// Curriculum OT by the vector-only scaling iteration.
pub fn solve_cot_esi(problem: &TransportProblem, opts: &ScalingOptions) -> Result<(DenseMatrix, SolveReport)> {
    let started = Instant::now();
    let (state, iterations) = cot_esi_scaling(problem, opts, None)?;
    let q = state.coupling()?;
    let report = scaling_report(problem, &q, iterations, opts, started)?;
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::solve_sinkhorn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| lo + rng.random::<f64>()).unwrap()
    }

    fn random_marginal(rng: &mut ChaCha8Rng, n: usize, mass: f64) -> Marginal {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
        let s: f64 = v.iter().sum();
        Marginal::new(v.into_iter().map(|x| mass * x / s).collect()).unwrap()
    }

    /// Generalized KL divergence `Σ Q log(Q/K) − Q + K`.
    fn kl(q: &DenseMatrix, k: &DenseMatrix) -> f64 {
        q.as_slice()
            .iter()
            .zip(k.as_slice())
            .map(|(&x, &y)| if x > 0.0 { x * (x / y).ln() - x + y } else { y })
            .sum()
    }

    #[test]
    fn row_projection_examples() {
        let alpha = Marginal::new(vec![1.0]).unwrap();
        let m = DenseMatrix::from_rows(&[vec![0.6, 0.6]]).unwrap();
        let p = kl_project_row_inequality(&m, &alpha).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15 && (p.get(0, 1) - 0.5).abs() < 1e-15);
        let m = DenseMatrix::from_rows(&[vec![0.2, 0.2]]).unwrap();
        assert_eq!(kl_project_row_inequality(&m, &alpha).unwrap(), m);
        let bad = DenseMatrix::from_rows(&[vec![0.2, 0.0]]).unwrap();
        assert!(matches!(kl_project_row_inequality(&bad, &alpha), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn row_projection_matches_per_row_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 6, 4, 0.01);
        let alpha = Marginal::new((0..6).map(|_| 1.5 * rng.random::<f64>() + 0.5).collect()).unwrap();
        let p = kl_project_row_inequality(&m, &alpha).unwrap();
        for i in 0..6 {
            let s_in: f64 = m.row(i).iter().sum();
            let s_out: f64 = p.row(i).iter().sum();
            let a = alpha.entries()[i];
            assert!(s_out <= a + 1e-12);
            if s_in <= a {
                assert_eq!(p.row(i), m.row(i));
            } else {
                for j in 0..4 {
                    assert!((p.get(i, j) - m.get(i, j) * a / s_in).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn col_projection_examples() {
        let beta = Marginal::new(vec![0.5, 0.5]).unwrap();
        let m = DenseMatrix::filled(2, 2, 1.0).unwrap();
        let p = kl_project_col_equality(&m, &beta).unwrap();
        assert_eq!(p, DenseMatrix::filled(2, 2, 0.25).unwrap());
        assert_eq!(kl_project_col_equality(&p, &beta).unwrap(), p);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_matrix(&mut rng, 6, 4, 0.01);
        let beta = random_marginal(&mut rng, 4, 0.7);
        let p = kl_project_col_equality(&m, &beta).unwrap();
        for j in 0..4 {
            let s: f64 = (0..6).map(|i| p.get(i, j)).sum();
            assert!((s - beta.entries()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn dykstra_total_mass_is_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cost = random_matrix(&mut rng, 4, 2, 0.0);
        let p = TransportProblem::curriculum_uniform(cost, 0.5, 0.1).unwrap();
        let (q, report) = solve_cot_dykstra(&p, 200).unwrap();
        assert!((q.sum() - 0.5).abs() < 1e-10);
        assert!(report.col_residual < 1e-10);
        assert!(report.row_residual < 1e-10);
    }

    #[test]
    fn balanced_masses_reduce_to_sinkhorn() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cost = random_matrix(&mut rng, 8, 4, 0.0);
        let cot = TransportProblem::curriculum_uniform(cost.clone(), 1.0, 0.1).unwrap();
        let ot = TransportProblem::new(
            cost,
            Marginal::uniform(8, 1.0).unwrap(),
            Marginal::uniform(4, 1.0).unwrap(),
            0.1,
            ConstraintKind::Equality,
        )
        .unwrap();
        let (q_ot, _) = solve_sinkhorn(&ot, &ScalingOptions::until(1e-14, 100_000)).unwrap();
        let (q_dyk, _) = solve_cot_dykstra(&cot, 2000).unwrap();
        let (q_esi, _) = solve_cot_esi(&cot, &ScalingOptions::until(1e-14, 100_000)).unwrap();
        assert!(q_dyk.max_abs_diff(&q_ot).unwrap() < 1e-8);
        assert!(q_esi.max_abs_diff(&q_ot).unwrap() < 1e-8);
    }

    #[test]
    fn constant_cost_gives_uniform_coupling() {
        let p = TransportProblem::curriculum_uniform(DenseMatrix::filled(6, 3, 0.7).unwrap(), 0.5, 0.1).unwrap();
        let (q, _) = solve_cot_esi(&p, &ScalingOptions::default()).unwrap();
        for v in q.as_slice() {
            assert!((v - 0.5 / 18.0).abs() < 1e-15);
        }
    }

    #[test]
    fn esi_agrees_with_dykstra_on_50x10() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cost = random_matrix(&mut rng, 50, 10, 0.0);
        let p = TransportProblem::curriculum_uniform(cost, 0.6, 0.1).unwrap();
        let (q_dyk, _) = solve_cot_dykstra(&p, 500).unwrap();
        let (q_esi, _) = solve_cot_esi(&p, &ScalingOptions::fixed(500)).unwrap();
        assert!(q_esi.max_abs_diff(&q_dyk).unwrap() < 1e-6);
    }

    #[test]
    fn dykstra_iterates_are_diagonal_scalings() {
        // U′ is constant along rows and U along columns after every sweep.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cost = random_matrix(&mut rng, 7, 3, 0.0);
        let p = TransportProblem::curriculum_uniform(cost, 0.4, 0.2).unwrap();
        let k = gibbs_kernel(p.cost(), p.epsilon()).unwrap();
        let mut state = DykstraState::new(&k).unwrap();
        for _ in 0..5 {
            state.step(p.row_marginal().entries(), p.col_marginal().entries()).unwrap();
            let (u, u_prime) = state.corrections().unwrap();
            for i in 0..7 {
                for j in 0..3 {
                    assert!((u_prime.get(i, j) / u_prime.get(i, 0) - 1.0).abs() < 1e-12);
                    assert!((u.get(i, j) / u.get(0, j) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kl_to_kernel_at_column_steps_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cost = random_matrix(&mut rng, 12, 4, 0.0);
        let p = TransportProblem::curriculum_uniform(cost, 0.5, 0.1).unwrap();
        let k = gibbs_kernel(p.cost(), p.epsilon()).unwrap();
        let mut state = DykstraState::new(&k).unwrap();
        let mut trace = Vec::new();
        for _ in 0..60 {
            state.step(p.row_marginal().entries(), p.col_marginal().entries()).unwrap();
            trace.push(p.epsilon() * kl(&state.q().unwrap(), &k));
        }
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_zero_marginal_entries() {
        let cost = DenseMatrix::zeros(2, 2).unwrap();
        let p = TransportProblem::new(
            cost,
            Marginal::new(vec![0.5, 0.0]).unwrap(),
            Marginal::new(vec![0.25, 0.25]).unwrap(),
            0.1,
            ConstraintKind::CurriculumRowInequality,
        )
        .unwrap();
        assert!(solve_cot_esi(&p, &ScalingOptions::default()).is_err());
        assert!(solve_cot_dykstra(&p, 10).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn esi_equals_dykstra(seed in 0u64..10_000, rows in 2usize..200, cols in 2usize..20, m in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost = random_matrix(&mut rng, rows, cols, 0.0);
            let p = TransportProblem::curriculum_uniform(cost, m, 0.1).unwrap();
            let (q_dyk, _) = solve_cot_dykstra(&p, 500).unwrap();
            let (q_esi, r) = solve_cot_esi(&p, &ScalingOptions::fixed(500)).unwrap();
            proptest::prop_assert!(q_esi.max_abs_diff(&q_dyk).unwrap() < 1e-6);
            proptest::prop_assert!((q_esi.sum() - m).abs() < 1e-10);
            if r.converged {
                proptest::prop_assert!(r.col_residual < 1e-8 && r.row_residual < 1e-8);
            }
        }
    }
}
