//! `csot` command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use csot_core::bench::{results_to_csv, run_benchmark, parse_sizes};
use csot_core::csot::{solve_csot_gcg, GcgConfig};
use csot_core::curriculum::{solve_cot_dykstra, solve_cot_esi};
use csot_core::features::{cost_from_predictions, one_hot, DEFAULT_PREDICTION_FLOOR};
use csot_core::io::{encode, encode_labels, load_labels, load_matrix, load_vector, MatrixFormat};
use csot_core::relabel::{denoise_relabel_batch, RelabelConfig};
use csot_core::simlab::{class_means, generate_gaussian_mixture, prototype_predictions, NoiseSpec};
use csot_core::sinkhorn::{solve_sinkhorn, ScalingOptions};
use csot_core::{
    ConstraintKind, DenseMatrix, Error, ExecMode, Marginal, SolveReport, StructureContext, TransportProblem,
};

#[derive(Parser)]
#[command(name = "csot", version, about = "Curriculum and structure-aware optimal transport solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one transport problem and write the coupling.
    Solve(SolveArgs),
    /// Relabel a batch of noisy samples.
    Relabel(RelabelArgs),
    /// Generate a synthetic noisy-label dataset.
    Simulate(SimulateArgs),
    /// Time Dykstra against the scaling iteration.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Sinkhorn,
    CotDykstra,
    CotEsi,
    Csot,
}

impl Algo {
    fn name(self) -> &'static str {
        match self {
            Algo::Sinkhorn => "sinkhorn",
            Algo::CotDykstra => "cot-dykstra",
            Algo::CotEsi => "cot-esi",
            Algo::Csot => "csot",
        }
    }
}

#[derive(Args, Clone)]
struct SolverFlags {
    /// Entropic regularization strength.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Weight of the structure terms.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Scaling iterations per solve (Dykstra sweeps for cot-dykstra).
    #[arg(long, default_value_t = 100)]
    inner_iters: usize,
    /// Stop the scaling iteration early once residuals drop below this.
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Conditional gradient steps.
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    /// Single-threaded, and timing fields are written as zero.
    #[arg(long)]
    deterministic: bool,
    /// Exit with status 2 if the solver did not converge.
    #[arg(long)]
    strict: bool,
}

impl SolverFlags {
    fn scaling(&self) -> ScalingOptions {
        let mut opts = match self.inner_tol {
            Some(tol) => ScalingOptions::until(tol, self.inner_iters),
            None => ScalingOptions::fixed(self.inner_iters),
        };
        opts.mode = if self.deterministic { ExecMode::Deterministic } else { ExecMode::Parallel };
        opts
    }

    fn gcg(&self) -> GcgConfig {
        GcgConfig { outer_iters: self.outer_iters, inner: self.scaling(), ..GcgConfig::default() }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// Cost matrix. Optional for csot when --pred is given.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Prediction matrix (csot).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// One-hot label matrix or a label index list (csot).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Sample similarity matrix (csot).
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Row marginal; uniform with unit mass if omitted.
    #[arg(long)]
    row_marginal: Option<PathBuf>,
    /// Column marginal; uniform with mass --budget if omitted.
    #[arg(long)]
    col_marginal: Option<PathBuf>,
    /// Transported mass for the curriculum solvers.
    #[arg(long, default_value_t = 0.3)]
    budget: f64,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RelabelArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    sim: PathBuf,
    #[arg(long)]
    noisy_labels: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    budget: f64,
    /// Only unselected-but-disagreeing samples are left out of the corrupted set.
    #[arg(long)]
    gate_corrupted: bool,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// `sym:RATIO` or `asym:RATIO`.
    #[arg(long, default_value = "sym:0.5")]
    noise: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Softmax temperature of the simulated classifier.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// `RxC[,RxC...]`.
    #[arg(long)]
    sizes: String,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; a JSON copy is written next to it.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Core(Error),
    Flag(String),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Report<'a> {
    algo: &'a str,
    #[serde(flatten)]
    report: &'a SolveReport,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_matrix(path: &Path, m: &DenseMatrix) -> CliResult<()> {
    write_atomic(path, &encode(m, MatrixFormat::from_path(path)))
}

fn read_matrix(path: &Path) -> CliResult<DenseMatrix> {
    Ok(load_matrix(path, MatrixFormat::from_path(path))?)
}

fn finish_report(algo: &str, mut report: SolveReport, flags: &SolverFlags, path: Option<&Path>) -> CliResult<()> {
    if flags.deterministic {
        report.wall_time_ms = 0.0;
    }
    if let Some(path) = path {
        write_json(path, &Report { algo, report: &report })?;
    }
    if flags.strict && !report.converged {
        return Err(Failure::NotConverged(format!(
            "{algo} did not converge after {} iterations (row residual {:.3e}, col residual {:.3e})",
            report.iterations, report.row_residual, report.col_residual
        )));
    }
    Ok(())
}

fn marginal(path: Option<&Path>, len: usize, mass: f64, what: &str) -> CliResult<Marginal> {
    match path {
        Some(p) => {
            let v = load_vector(p)?;
            if v.len() != len {
                return Err(Error::Dimension(format!("{what} marginal has {} entries, expected {len}", v.len())).into());
            }
            Ok(Marginal::new(v)?)
        }
        None => Ok(Marginal::uniform(len, mass)?),
    }
}

fn label_matrix(path: &Path, rows: usize, cols: usize) -> CliResult<DenseMatrix> {
    let m = read_matrix(path)?;
    if m.shape() == (rows, cols) {
        return Ok(m);
    }
    let labels = if m.rows() == 1 || m.cols() == 1 {
        m.as_slice()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::InvalidInput(format!("label value {x} is not a class index")))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?
    } else {
        return Err(Error::Dimension(format!(
            "labels are {}x{}, expected {rows}x{cols} or a list of {rows} indices",
            m.rows(),
            m.cols()
        ))
        .into());
    };
    if labels.len() != rows {
        return Err(Error::Dimension(format!("{} labels for {rows} rows", labels.len())).into());
    }
    Ok(one_hot(&labels, cols)?)
}

fn solve(args: SolveArgs) -> CliResult<()> {
    let flags = &args.solver;
    let pred = args.pred.as_deref().map(read_matrix).transpose()?;
    let cost = match (&args.cost, &pred) {
        (Some(p), _) => read_matrix(p)?,
        (None, Some(pred)) if args.algo == Algo::Csot => cost_from_predictions(pred, DEFAULT_PREDICTION_FLOOR)?,
        _ => return Err(Failure::Flag("--cost is required (or --pred with --algo csot)".into())),
    };
    let (rows, cols) = cost.shape();
    let alpha = marginal(args.row_marginal.as_deref(), rows, 1.0, "row")?;
    let (kind, col_mass) = match args.algo {
        Algo::Sinkhorn => (ConstraintKind::Equality, alpha.mass()),
        _ => (ConstraintKind::CurriculumRowInequality, args.budget),
    };
    let beta = marginal(args.col_marginal.as_deref(), cols, col_mass, "column")?;
    let problem = TransportProblem::new(cost, alpha, beta, flags.epsilon, kind)?;

    let (q, report) = match args.algo {
        Algo::Sinkhorn => solve_sinkhorn(&problem, &flags.scaling())?,
        Algo::CotDykstra => solve_cot_dykstra(&problem, flags.inner_iters)?,
        Algo::CotEsi => solve_cot_esi(&problem, &flags.scaling())?,
        Algo::Csot => {
            let (Some(pred), Some(labels), Some(sim)) = (pred, &args.labels, &args.sim) else {
                return Err(Failure::Flag("--algo csot needs --pred, --labels and --sim".into()));
            };
            let labels = label_matrix(labels, rows, cols)?;
            let sim = read_matrix(sim)?;
            let ctx = StructureContext::new(sim, pred, labels, flags.kappa)?;
            solve_csot_gcg(&problem, &ctx, &flags.gcg())?
        }
    };
    write_matrix(&args.out, &q)?;
    finish_report(args.algo.name(), report, flags, args.report.as_deref())
}

fn relabel(args: RelabelArgs) -> CliResult<()> {
    let flags = &args.solver;
    let pred = read_matrix(&args.pred)?;
    let sim = read_matrix(&args.sim)?;
    let noisy = load_labels(&args.noisy_labels)?;
    let config = RelabelConfig {
        epsilon: flags.epsilon,
        kappa: flags.kappa,
        gcg: flags.gcg(),
        gate_corrupted_by_selection: args.gate_corrupted,
        ..RelabelConfig::default()
    };
    let (outcome, report) = denoise_relabel_batch(&pred, &sim, &noisy, args.budget, &config)?;
    write_json(&args.out, &outcome)?;
    finish_report("csot", report, flags, args.report.as_deref())
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let noise: NoiseSpec = args.noise.parse()?;
    let ds = generate_gaussian_mixture(args.n, args.classes, args.dim, args.separation, args.seed)?.with_noise(noise)?;
    let estimated = class_means(&ds.features, &ds.noisy_labels, ds.num_classes)?;
    let predictions = prototype_predictions(&ds.features, &estimated, args.temperature)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    write_matrix(&dir.join("features.csmat"), &ds.features)?;
    write_matrix(&dir.join("prototypes.csmat"), &ds.prototypes)?;
    write_matrix(&dir.join("predictions.csmat"), &predictions)?;
    write_atomic(&dir.join("noisy_labels.csv"), encode_labels(&ds.noisy_labels).as_bytes())?;
    write_json(&dir.join("dataset.json"), &ds.sidecar())
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let sizes = parse_sizes(&args.sizes)?;
    let results = run_benchmark(&sizes, args.trials, args.iters, args.epsilon, args.seed)?;
    write_atomic(&args.out, results_to_csv(&results).as_bytes())?;
    write_json(&args.out.with_extension("json"), &results)
}

fn fail(code: &str, message: &str) -> ExitCode {
    eprintln!("{code}: {}", message.replace('\n', " "));
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return fail("E_FLAG", first.trim_start_matches("error: "));
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Relabel(a) => relabel(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => fail(e.code(), &e.to_string()),
        Err(Failure::Flag(msg)) => fail("E_FLAG", &msg),
        Err(Failure::NotConverged(msg)) => {
            eprintln!("E_CONVERGENCE: {msg}");
            ExitCode::from(2)
        }
    }
}
