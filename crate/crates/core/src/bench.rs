//! Timing harness comparing Dykstra projections ("vda") against the
//! vector-only scaling iteration ("esi") on curriculum OT instances.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{solve_cot_dykstra, solve_cot_esi};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::problem::TransportProblem;
use crate::sinkhorn::ScalingOptions;

pub const CORRECTNESS_TOL: f64 = 1e-6;
pub const BENCH_BUDGET: f64 = 0.5;
pub const CSV_HEADER: &str = "rows,cols,algo,trials,median_ms,min_ms,max_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchAlgo {
    Vda,
    Esi,
}

impl BenchAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BenchAlgo::Vda => "vda",
            BenchAlgo::Esi => "esi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: usize,
    pub cols: usize,
    pub algo: BenchAlgo,
    pub trials: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Uniform `[0, 1)` cost, uniform rows, column budget [`BENCH_BUDGET`].
pub fn bench_instance(rows: usize, cols: usize, epsilon: f64, seed: u64) -> Result<TransportProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    let cost = DenseMatrix::new(rows, cols, values)?;
    TransportProblem::curriculum_uniform(cost, BENCH_BUDGET, epsilon)
}

fn summarize(rows: usize, cols: usize, algo: BenchAlgo, mut times: Vec<f64>) -> BenchResult {
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 { times[n / 2] } else { 0.5 * (times[n / 2 - 1] + times[n / 2]) };
    BenchResult { rows, cols, algo, trials: n, median_ms: median, min_ms: times[0], max_ms: times[n - 1] }
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let started = Instant::now();
    let out = f()?;
    Ok((out, started.elapsed().as_secs_f64() * 1e3))
}

/// Times both solvers on one shared instance per size. Each solver gets one
/// untimed warm-up run; the warm-up outputs must agree within
/// [`CORRECTNESS_TOL`].
pub fn run_benchmark(
    sizes: &[(usize, usize)],
    trials: usize,
    iters: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<BenchResult>> {
    if trials < 3 {
        return Err(Error::invalid(format!("benchmark needs at least 3 trials, got {trials}")));
    }
    if sizes.is_empty() {
        return Err(Error::invalid("no benchmark sizes given"));
    }
    let opts = ScalingOptions::fixed(iters);
    let mut results = Vec::with_capacity(2 * sizes.len());
    for &(rows, cols) in sizes {
        let problem = bench_instance(rows, cols, epsilon, seed)?;
        let (q_vda, _) = solve_cot_dykstra(&problem, iters)?;
        let (q_esi, _) = solve_cot_esi(&problem, &opts)?;
        let diff = q_vda.max_abs_diff(&q_esi)?;
        if diff.is_nan() || diff > CORRECTNESS_TOL {
            return Err(Error::Correctness(format!(
                "vda and esi disagree by {diff:.3e} at {rows}x{cols} (tolerance {CORRECTNESS_TOL:e})"
            )));
        }
        let mut vda = Vec::with_capacity(trials);
        let mut esi = Vec::with_capacity(trials);
        for _ in 0..trials {
            vda.push(time_ms(|| solve_cot_dykstra(&problem, iters))?.1);
            esi.push(time_ms(|| solve_cot_esi(&problem, &opts))?.1);
        }
        results.push(summarize(rows, cols, BenchAlgo::Vda, vda));
        results.push(summarize(rows, cols, BenchAlgo::Esi, esi));
    }
    Ok(results)
}

pub fn results_to_csv(results: &[BenchResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{:.3}",
            r.rows,
            r.cols,
            r.algo.name(),
            r.trials,
            r.median_ms,
            r.min_ms,
            r.max_ms
        );
    }
    out
}

/// Parses `RxC[,RxC...]`.
pub fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            let (r, c) = part
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::invalid(format!("size {part:?} must look like ROWSxCOLS")))?;
            let parse = |t: &str| -> Result<usize> {
                match t.parse::<usize>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(Error::invalid(format!("bad size component {t:?} in {part:?}"))),
                }
            };
            Ok((parse(r)?, parse(c)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let r = summarize(1, 1, BenchAlgo::Esi, vec![3.0, 1.0, 2.0]);
        assert_eq!((r.min_ms, r.median_ms, r.max_ms), (1.0, 2.0, 3.0));
        let r = summarize(1, 1, BenchAlgo::Esi, vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(r.median_ms, 2.5);
    }

    #[test]
    fn small_benchmark_shape() {
        let res = run_benchmark(&[(20, 5), (8, 8)], 3, 50, 0.1, 7).unwrap();
        assert_eq!(res.len(), 4);
        assert_eq!(res[0].algo, BenchAlgo::Vda);
        assert_eq!(res[1].algo, BenchAlgo::Esi);
        for r in &res {
            assert_eq!(r.trials, 3);
            assert!(r.min_ms <= r.median_ms && r.median_ms <= r.max_ms);
        }
        let csv = results_to_csv(&res);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(CSV_HEADER));
    }

    #[test]
    fn instance_is_shared_across_calls() {
        let a = bench_instance(30, 4, 0.1, 3).unwrap();
        let b = bench_instance(30, 4, 0.1, 3).unwrap();
        assert_eq!(a.cost(), b.cost());
    }

    #[test]
    fn rejects_too_few_trials() {
        assert!(run_benchmark(&[(4, 4)], 2, 10, 0.1, 0).is_err());
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_sizes("100x100,1024X10").unwrap(), vec![(100, 100), (1024, 10)]);
        assert!(parse_sizes("100").is_err());
        assert!(parse_sizes("0x3").is_err());
    }
}
