//! Command-line front end shared by the `cvxnn` binary and its tests.
//!
//! Every command resolves an [`ExperimentManifest`] (config file first,
//! then flags), writes it to the output directory in both formats and
//! derives all randomness from the manifest seed, so re-running with the
//! written manifest reproduces every output byte for byte.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::arrangements::{
    count_bound, enumerate_exact_with, sample_convolutional, sample_gaussian, sample_size_threshold, EnumerateConfig,
    ImageShape, PatternSet,
};
use crate::baseline::{multi_restart, train_linear_cnn, Optimizer, TrainConfig};
use crate::data::{DataMatrix, LabelData};
use crate::datasets::{mse, Dataset};
use crate::error::{Error, Result};
use crate::extensions::{
    conjugate_symmetry_error, fourier_features_predict, linear_cnn_train, lowrank_train, subspace_distance,
    vector_output_train, CircularNetwork, LowRankPatterns, PatchSet,
};
use crate::fmt::fmt_f64;
use crate::manifest::{ExperimentManifest, PatternChoice, SolverMethod};
use crate::mapping::{
    convex_to_network, network_forward, network_to_convex, nonconvex_objective, stationarity_check,
    vector_output_objective, weight_decay, NetworkParams,
};
use crate::program::{ConvexProgram, GroupWeights, ProgramMode, RegNorm};
use crate::solvers::{
    solve_admm, solve_circular_fourier, solve_conic, solve_penalized, solve_projected, SolveReport, SolveStatus,
    SolverConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

/// Relative gap allowed between the convex optimum and the objective of
/// the reconstructed network: `|gap| <= PARITY_TOL * (1 + |p|)`.
pub const PARITY_TOL: f64 = 1e-6;

/// Stationarity tolerance when `--tol` is not given.
pub const DEFAULT_STATIONARITY_TOL: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "cvxnn", version, about = "Exact convex training of two-layer ReLU-family networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for data generators, pattern sampling and baseline runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Manifest file (`.json`, or sectioned key = value text otherwise).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel seeds, columns and pattern blocks.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Solver tolerance; the stationarity tolerance for check-stationarity.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// CSV with a header row; the last `--label-cols` columns are labels.
    #[arg(long, conflicts_with = "generator")]
    pub data: Option<PathBuf>,
    /// Generator: toy1d, planted_relu:n=..,d=.., rank_deficient_gaussian:n=..,d=..,k=.., ar3:len=..
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub label_cols: Option<usize>,
    /// Append a ones column to the features.
    #[arg(long)]
    pub bias: bool,
    /// Train on this leading fraction of rows and test on the rest.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ProgramArgs {
    #[arg(long)]
    pub beta: Option<f64>,
    /// Leaky slope: 0 is ReLU, -1 the absolute value.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    /// Group norm exponent (1 or 2).
    #[arg(long = "p")]
    pub reg_p: Option<u32>,
    /// exact, sampled:<count> or file:<path>.
    #[arg(long)]
    pub patterns: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    #[arg(long, value_enum)]
    pub solver: Option<SolverMethod>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct BaselineArgs {
    /// Consecutive seeds per configuration, starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Learning rates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lr: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleMethod {
    Gaussian,
    Conv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate every activation pattern of the data.
    Enumerate {
        #[command(flatten)]
        data: DataArgs,
        /// Largest data rank accepted.
        #[arg(long, default_value_t = crate::arrangements::DEFAULT_R_MAX)]
        r_max: usize,
    },
    /// Sample activation patterns from random directions.
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = SampleMethod::Gaussian)]
        method: SampleMethod,
        /// Image layout HxW or HxWxC for convolutional sampling.
        #[arg(long)]
        image: Option<String>,
        /// Filter size HxW for convolutional sampling.
        #[arg(long)]
        filter: Option<String>,
        /// Also enumerate exactly and report the fraction recovered.
        #[arg(long)]
        compare_exact: bool,
    },
    /// Pattern-count bound and sampling threshold.
    Bound {
        #[command(flatten)]
        data: DataArgs,
        /// Hyperplane count; taken from the data when omitted.
        #[arg(long)]
        n: Option<usize>,
        /// Rank; taken from the data when omitted.
        #[arg(long)]
        r: Option<usize>,
        /// Pattern count for the sampling threshold.
        #[arg(long)]
        patterns: Option<usize>,
        /// `P * min_i theta_i` for the sampling threshold.
        #[arg(long)]
        theta_bar: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
    /// Solve the convex program and reconstruct the network.
    TrainConvex {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Build patterns from the rank-k approximation of the data.
        #[arg(long)]
        rank: Option<usize>,
        /// Minimum-norm interpolation with this residual tolerance.
        #[arg(long, num_args = 0..=1, default_missing_value = "1e-8")]
        interpolate: Option<f64>,
    },
    /// Train the non-convex network by gradient descent from seeded starts.
    TrainBaseline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        baseline: BaselineArgs,
    },
    /// Convex optimum against every seeded baseline run.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        baseline: BaselineArgs,
    },
    /// First-order stationarity of a saved network.
    CheckStationarity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        /// Network weight file.
        #[arg(long)]
        network: PathBuf,
        /// Also solve the convex program over the network's own patterns.
        #[arg(long)]
        subsample: bool,
    },
    /// Nuclear-norm program of a two-layer linear CNN on 1D signals.
    CnnLinear {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        baseline: BaselineArgs,
        #[arg(long, default_value_t = 3)]
        patch: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        padding: usize,
        /// Also train the factored CNN by gradient descent.
        #[arg(long)]
        gd: bool,
    },
    /// Fourier-domain lasso of a circular linear CNN.
    CnnCircular {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Training on rank-k arrangements with the certified ratio.
    Lowrank {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        k: usize,
        /// Also solve the full program and check the sandwich bound.
        #[arg(long)]
        reference: bool,
    },
}

/// Maps library errors onto exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Unsupported(_) | Error::RankTooLarge { .. } => EXIT_USAGE,
        Error::Shape(_) | Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => EXIT_DATA,
        Error::Lp(_) | Error::Diverged(_) => EXIT_NONCONVERGENCE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.global.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Enumerate { data, r_max } => {
            let m = resolve(g, Some(data), None, None, None, Some(0))?;
            cmd_enumerate(&m, *r_max)
        }
        Command::Sample { data, count, method, image, filter, compare_exact } => {
            let mut m = resolve(g, Some(data), None, None, None, Some(0))?;
            let explicit = data.data.is_some() || data.generator.is_some() || g.config.is_some();
            if *method == SampleMethod::Conv && !explicit {
                let shape = parse_image(image.as_deref())?;
                m.dataset.generator = Some(format!("planted_relu:n=20,d={}", shape.len()));
            }
            m.program.patterns = format!("sampled:{count}");
            cmd_sample(&m, *count, *method, image.as_deref(), filter.as_deref(), *compare_exact)
        }
        Command::Bound { data, n, r, patterns, theta_bar, epsilon } => {
            let m = resolve(g, Some(data), None, None, None, Some(0))?;
            cmd_bound(&m, *n, *r, *patterns, *theta_bar, *epsilon)
        }
        Command::TrainConvex { data, program, solver, rank, interpolate } => {
            let mut m = resolve(g, Some(data), Some(program), Some(solver), None, None)?;
            if rank.is_some() {
                m.program.rank = *rank;
            }
            if interpolate.is_some() {
                m.program.interpolate = *interpolate;
            }
            m.validate()?;
            cmd_train_convex(&m)
        }
        Command::TrainBaseline { data, program, baseline } => {
            let m = resolve(g, Some(data), Some(program), None, Some(baseline), None)?;
            cmd_train_baseline(&m)
        }
        Command::Compare { data, program, solver, baseline } => {
            let m = resolve(g, Some(data), Some(program), Some(solver), Some(baseline), None)?;
            cmd_compare(&m)
        }
        Command::CheckStationarity { data, program, network, subsample } => {
            let m = resolve(g, Some(data), Some(program), None, None, None)?;
            cmd_check_stationarity(&m, network, g.tol.unwrap_or(DEFAULT_STATIONARITY_TOL), *subsample)
        }
        Command::CnnLinear { data, program, baseline, patch, stride, padding, gd } => {
            let m = resolve(g, Some(data), Some(program), None, Some(baseline), None)?;
            cmd_cnn_linear(&m, *patch, *stride, *padding, *gd)
        }
        Command::CnnCircular { data, program, solver } => {
            let m = resolve(g, Some(data), Some(program), Some(solver), None, None)?;
            cmd_cnn_circular(&m)
        }
        Command::Lowrank { data, program, solver, k, reference } => {
            let mut m = resolve(g, Some(data), Some(program), Some(solver), None, None)?;
            m.program.rank = Some(*k);
            m.validate()?;
            cmd_lowrank(&m, *k, *reference)
        }
    }
}

/// Manifest from `--config` (or defaults) with every given flag applied.
/// `label_cols` is the command's default when neither flag nor config sets it.
fn resolve(
    g: &GlobalArgs,
    data: Option<&DataArgs>,
    program: Option<&ProgramArgs>,
    solver: Option<&SolverArgs>,
    baseline: Option<&BaselineArgs>,
    label_cols: Option<usize>,
) -> Result<ExperimentManifest> {
    let mut m = match &g.config {
        Some(p) => ExperimentManifest::read_file(p)?,
        None => {
            let mut m = ExperimentManifest::default();
            if let Some(l) = label_cols {
                m.dataset.label_cols = l;
            }
            m
        }
    };
    if let Some(s) = g.seed {
        m.seed = s;
    }
    if let Some(o) = &g.out {
        m.output_dir = o.clone();
    }
    if let Some(t) = g.tol {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument("--tol must be positive".into()));
        }
        let c = &mut m.solver.config;
        c.abs_tol = t;
        c.rel_tol = t;
        c.obj_tol = t;
    }
    if let Some(d) = data {
        if let Some(p) = &d.data {
            m.dataset.path = Some(p.clone());
            m.dataset.generator = None;
        }
        if let Some(gen) = &d.generator {
            m.dataset.generator = Some(gen.clone());
            m.dataset.path = None;
        }
        if let Some(l) = d.label_cols {
            m.dataset.label_cols = l;
        }
        if d.bias {
            m.program.bias = true;
        }
        if d.train_fraction.is_some() {
            m.dataset.train_fraction = d.train_fraction;
        }
    }
    if let Some(p) = program {
        if let Some(b) = p.beta {
            m.program.beta = b;
        }
        if let Some(k) = p.kappa {
            m.program.kappa = k;
        }
        if let Some(r) = p.reg_p {
            m.program.reg_p = r;
        }
        if let Some(s) = &p.patterns {
            m.program.patterns = s.clone();
        }
    }
    if let Some(s) = solver {
        if let Some(method) = s.solver {
            m.solver.method = method;
        }
        if let Some(it) = s.max_iters {
            m.solver.config.max_iters = it;
        }
    }
    if let Some(b) = baseline {
        let t = &mut m.baseline;
        if let Some(v) = b.seeds {
            t.seeds = v;
        }
        if let Some(v) = &b.m {
            t.m = v.clone();
        }
        if let Some(v) = &b.lr {
            t.lr = v.clone();
        }
        if let Some(v) = b.epochs {
            t.epochs = v;
        }
        if let Some(v) = b.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = b.optimizer {
            t.optimizer = v;
        }
        if let Some(v) = b.init_scale {
            t.init_scale = v;
        }
        if b.lr_final.is_some() {
            t.lr_final = b.lr_final;
        }
    }
    m.solver.config.seed = m.seed;
    m.validate()?;
    Ok(m)
}

struct Prepared {
    train: Dataset,
    test: Option<Dataset>,
    data: DataMatrix,
    labels: Option<LabelData>,
}

impl Prepared {
    fn labels(&self) -> Result<&LabelData> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::Data("the dataset has no label columns; set --label-cols".into()))
    }

    /// Test features in the layout the network was trained on.
    fn test_features(&self, bias: bool) -> Option<DMatrix<f64>> {
        self.test.as_ref().map(|t| if bias { augment(&t.x) } else { t.x.clone() })
    }
}

fn augment(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

fn prepare(m: &ExperimentManifest) -> Result<Prepared> {
    let ds = m.load_dataset()?;
    let (train, test) = match m.dataset.train_fraction {
        Some(f) => {
            let (a, b) = ds.split(f)?;
            (a, Some(b))
        }
        None => (ds, None),
    };
    let data = if m.program.bias { DataMatrix::with_bias(train.x.clone())? } else { DataMatrix::new(train.x.clone())? };
    let labels = if train.y.ncols() > 0 { Some(LabelData::new(train.y.clone())?) } else { None };
    Ok(Prepared { train, test, data, labels })
}

/// Creates the output directory and records the manifest in both formats.
fn start_outputs(m: &ExperimentManifest) -> Result<PathBuf> {
    let out = m.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("manifest.json"), m.to_json())?;
    std::fs::write(out.join("manifest.toml"), m.to_config_text())?;
    Ok(out)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Report without wall time, which would break byte-identical reruns.
fn report_value(report: &SolveReport) -> Value {
    let mut v = serde_json::to_value(report).expect("report serialises");
    if let Some(o) = v.as_object_mut() {
        o.remove("wall_time");
    }
    v
}

fn matrix_csv(header: &[String], m: &DMatrix<f64>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in m.row_iter() {
        let vals: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}

fn weights_csv(w: &GroupWeights) -> String {
    let p = w.num_patterns();
    let header: Vec<String> = (0..w.num_blocks())
        .map(|i| if i < p { format!("pos{i}") } else { format!("neg{}", i - p) })
        .collect();
    matrix_csv(&header, w.matrix())
}

fn build_patterns(m: &ExperimentManifest, x: &DataMatrix) -> Result<PatternSet> {
    match m.pattern_choice()? {
        PatternChoice::Exact => enumerate_exact_with(x, &EnumerateConfig::default()),
        PatternChoice::Sampled(c) => sample_gaussian(x, c, m.seed),
        PatternChoice::File(p) => PatternSet::read_file(&p),
    }
}

fn solve_with(method: SolverMethod, prog: &ConvexProgram, cfg: &SolverConfig) -> Result<(GroupWeights, SolveReport)> {
    match method {
        SolverMethod::Admm => solve_admm(prog, cfg),
        SolverMethod::Penalized => solve_penalized(prog, cfg),
        SolverMethod::Conic => solve_conic(prog, cfg),
        SolverMethod::Projected => solve_projected(prog, cfg),
    }
}

fn cmd_enumerate(m: &ExperimentManifest, r_max: usize) -> Result<i32> {
    let prep = prepare(m)?;
    let set = enumerate_exact_with(&prep.data, &EnumerateConfig { r_max })?;
    let out = start_outputs(m)?;
    set.write_file(&out.join("patterns.txt"))?;
    let n = prep.data.nrows();
    let r = prep.data.rank();
    let bound = count_bound(n, r);
    let coverage = set.len() as f64 / bound_as_f64(&bound);
    write_json(
        &out.join("summary.json"),
        &json!({"command": "enumerate", "n": n, "d": prep.data.ncols(), "rank": r, "patterns": set.len(),
                "bound": bound.to_string(), "coverage": coverage}),
    )?;
    println!("P={}, bound={}, coverage={}", set.len(), bound, fmt_f64(coverage));
    Ok(EXIT_OK)
}

fn bound_as_f64(b: &num_bigint::BigUint) -> f64 {
    b.to_string().parse().unwrap_or(f64::INFINITY)
}

fn parse_dims(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad {what} size '{text}'"))))
        .collect()
}

fn parse_image(text: Option<&str>) -> Result<ImageShape> {
    let text = text.ok_or_else(|| Error::InvalidArgument("convolutional sampling needs --image HxW[xC]".into()))?;
    match parse_dims(text, "image")?.as_slice() {
        [h, w] => Ok(ImageShape { height: *h, width: *w, channels: 1 }),
        [h, w, c] => Ok(ImageShape { height: *h, width: *w, channels: *c }),
        _ => Err(Error::InvalidArgument(format!("image size '{text}' is not HxW or HxWxC"))),
    }
}

fn cmd_sample(
    m: &ExperimentManifest,
    count: usize,
    method: SampleMethod,
    image: Option<&str>,
    filter: Option<&str>,
    compare_exact: bool,
) -> Result<i32> {
    let prep = prepare(m)?;
    let set = match method {
        SampleMethod::Gaussian => sample_gaussian(&prep.data, count, m.seed)?,
        SampleMethod::Conv => {
            let shape = parse_image(image)?;
            let f = filter.ok_or_else(|| Error::InvalidArgument("convolutional sampling needs --filter HxW".into()))?;
            let dims = parse_dims(f, "filter")?;
            let [fh, fw] = dims.as_slice() else {
                return Err(Error::InvalidArgument(format!("filter size '{f}' is not HxW")));
            };
            sample_convolutional(&prep.data, shape, (*fh, *fw), count, m.seed)?
        }
    };
    let out = start_outputs(m)?;
    set.write_file(&out.join("patterns.txt"))?;
    let n = prep.data.nrows();
    let r = prep.data.rank();
    let bound = count_bound(n, r);
    let mut summary = json!({"command": "sample", "source": set.source().to_string(), "draws": count,
        "n": n, "rank": r, "patterns": set.len(), "bound": bound.to_string()});
    let mut line = format!("P={}, bound={}", set.len(), bound);
    if compare_exact {
        let exact = enumerate_exact_with(&prep.data, &EnumerateConfig::default())?;
        let found = exact.iter().filter(|p| set.contains(p.bits())).count();
        let coverage = found as f64 / exact.len() as f64;
        summary["exact_patterns"] = json!(exact.len());
        summary["coverage"] = json!(coverage);
        line.push_str(&format!(", exact={}, coverage={}", exact.len(), fmt_f64(coverage)));
    }
    write_json(&out.join("summary.json"), &summary)?;
    println!("{line}");
    Ok(EXIT_OK)
}

fn cmd_bound(
    m: &ExperimentManifest,
    n: Option<usize>,
    r: Option<usize>,
    patterns: Option<usize>,
    theta_bar: Option<f64>,
    epsilon: f64,
) -> Result<i32> {
    let (n, r) = match (n, r) {
        (Some(n), Some(r)) => (n, r),
        _ => {
            let prep = prepare(m)?;
            (n.unwrap_or(prep.data.nrows()), r.unwrap_or(prep.data.rank()))
        }
    };
    let bound = count_bound(n, r);
    let out = start_outputs(m)?;
    let mut summary = json!({"command": "bound", "n": n, "r": r, "bound": bound.to_string()});
    let mut line = format!("bound={bound}");
    if let (Some(p), Some(t)) = (patterns, theta_bar) {
        let draws = sample_size_threshold(p, t, epsilon)?;
        summary["threshold"] = json!({"patterns": p, "theta_bar": t, "epsilon": epsilon, "draws": draws});
        line.push_str(&format!(", threshold={draws}"));
    }
    write_json(&out.join("summary.json"), &summary)?;
    println!("{line}");
    Ok(EXIT_OK)
}

/// Scale-invariant regularizer `sum_j ||w1_j||_q |w2_j|` matching a group
/// norm with exponent `q`.
fn product_penalty(net: &NetworkParams, reg: RegNorm) -> f64 {
    (0..net.neurons())
        .map(|j| reg.norm(net.w1.column(j).iter()) * net.w2.row(j).iter().map(|v| v.abs()).sum::<f64>())
        .sum()
}

fn parity_record(convex: f64, nonconvex: f64) -> (Value, bool) {
    let gap = nonconvex - convex;
    let rel = gap.abs() / (1.0 + convex.abs());
    let passed = rel <= PARITY_TOL;
    (
        json!({"convex_objective": convex, "nonconvex_objective": nonconvex, "relative_gap": rel,
               "tolerance": PARITY_TOL, "passed": passed}),
        passed,
    )
}

fn status_code(converged: bool, parity: bool) -> i32 {
    if !converged {
        EXIT_NONCONVERGENCE
    } else if !parity {
        EXIT_VALIDATION
    } else {
        EXIT_OK
    }
}

fn cmd_train_convex(m: &ExperimentManifest) -> Result<i32> {
    let prep = prepare(m)?;
    let labels = prep.labels()?.clone();
    let act = m.activation()?;
    let beta = m.program.beta;
    let cfg = &m.solver.config;
    let x = prep.data.values().clone();
    let y = labels.values().clone();

    if labels.outputs() > 1 {
        let set = build_patterns(m, &prep.data)?;
        let res = vector_output_train(&prep.data, &labels, beta, &set, act, cfg)?;
        let out = start_outputs(m)?;
        set.write_file(&out.join("patterns.txt"))?;
        write_network(&out.join("network.txt"), &res.network, m.program.bias)?;
        let nonconvex = vector_output_objective(&res.network, &x, &y, beta)?;
        let (parity, ok) = parity_record(res.total_objective(), nonconvex);
        write_json(&out.join("parity.json"), &parity)?;
        let reports: Vec<Value> = res.reports.iter().map(report_value).collect();
        write_json(&out.join("report.json"), &json!({"columns": reports, "objectives": res.objectives}))?;
        let converged = res.reports.iter().all(|r| r.status == SolveStatus::Converged);
        println!("objective={} columns={}", fmt_f64(res.total_objective()), labels.outputs());
        print_parity(&parity);
        return Ok(status_code(converged, ok));
    }

    if let Some(k) = m.program.rank {
        let patterns = match m.pattern_choice()? {
            PatternChoice::Sampled(count) => LowRankPatterns::Sampled { count, seed: m.seed },
            _ => LowRankPatterns::Exact,
        };
        let res = lowrank_train(&prep.data, &labels, k, beta, act, patterns, cfg)?;
        let out = start_outputs(m)?;
        res.patterns.write_file(&out.join("patterns.txt"))?;
        std::fs::write(out.join("weights.csv"), weights_csv(&res.weights))?;
        write_network(&out.join("network.txt"), &res.network, m.program.bias)?;
        write_json(&out.join("report.json"), &report_value(&res.report))?;
        std::fs::write(out.join("trajectory.jsonl"), res.report.to_json_lines())?;
        let nonconvex = nonconvex_objective(&res.network, &x, &y, beta)?;
        let (parity, ok) = parity_record(res.objective, nonconvex);
        write_json(&out.join("parity.json"), &parity)?;
        write_json(
            &out.join("summary.json"),
            &json!({"command": "train-convex", "rank": k, "ratio": res.plan.ratio, "plan": res.plan,
                    "approx_convex_objective": res.convex_objective, "objective": res.objective,
                    "patterns": res.patterns.len()}),
        )?;
        println!("objective={} ratio={} patterns={}", fmt_f64(res.objective), fmt_f64(res.plan.ratio), res.patterns.len());
        print_parity(&parity);
        return Ok(status_code(res.report.status == SolveStatus::Converged, ok));
    }

    let set = build_patterns(m, &prep.data)?;
    let mut builder = ConvexProgram::builder(prep.data.clone(), labels.clone(), set.clone())
        .activation(act)
        .beta(beta)
        .reg(RegNorm::from_p(m.program.reg_p)?);
    if let Some(t) = m.program.interpolate {
        builder = builder.interpolation(t);
    }
    let prog = builder.build()?;
    let (w, report) = solve_with(m.solver.method, &prog, cfg)?;
    let net = convex_to_network(&w, act);
    let out = start_outputs(m)?;
    set.write_file(&out.join("patterns.txt"))?;
    std::fs::write(out.join("weights.csv"), weights_csv(&w))?;
    write_network(&out.join("network.txt"), &net, m.program.bias)?;
    write_json(&out.join("report.json"), &report_value(&report))?;
    std::fs::write(out.join("trajectory.jsonl"), report.to_json_lines())?;

    let f = network_forward(&net, &x)?;
    let residual = (&f - &y).norm();
    let reg = prog.reg();
    let (convex, nonconvex) = match prog.mode() {
        ProgramMode::Interpolation { .. } => (prog.group_norm(&w), weight_decay(&net)),
        ProgramMode::Regularized if reg == RegNorm::L2 => (prog.objective(&w), nonconvex_objective(&net, &x, &y, beta)?),
        ProgramMode::Regularized => {
            (prog.objective(&w), 0.5 * (&f - &y).norm_squared() + beta * product_penalty(&net, reg))
        }
    };
    let (mut parity, ok) = parity_record(convex, nonconvex);
    let mut summary = json!({"command": "train-convex", "objective": convex, "patterns": set.len(),
        "neurons": net.neurons(), "status": report.status, "iterations": report.iterations, "residual": residual});
    if let ProgramMode::Interpolation { feas_tol } = prog.mode() {
        // The residual is reported, not gated: interior-point feasibility
        // holds only to the solver's own tolerance.
        parity["residual"] = json!(residual);
        parity["residual_tolerance"] = json!(feas_tol);
        summary["interpolation_tolerance"] = json!(feas_tol);
    }
    write_json(&out.join("parity.json"), &parity)?;
    if let Some(test) = prep.test_features(m.program.bias) {
        let ty = &prep.test.as_ref().expect("test split").y;
        summary["test_mse"] = json!(mse(&network_forward(&net, &test)?, ty));
    }
    write_json(&out.join("summary.json"), &summary)?;
    println!("objective={} patterns={} neurons={} residual={}", fmt_f64(convex), set.len(), net.neurons(), fmt_f64(residual));
    print_parity(&parity);
    Ok(status_code(report.status == SolveStatus::Converged, ok))
}

fn print_parity(p: &Value) {
    let get = |k: &str| p[k].as_f64().map(fmt_f64).unwrap_or_default();
    println!(
        "parity convex={} nonconvex={} gap={} {}",
        get("convex_objective"),
        get("nonconvex_objective"),
        get("relative_gap"),
        if p["passed"].as_bool() == Some(true) { "pass" } else { "FAIL" }
    );
}

fn write_network(path: &Path, net: &NetworkParams, bias: bool) -> Result<()> {
    if bias && net.input_dim() > 0 {
        net.split_bias_row().write_file(path)
    } else {
        net.write_file(path)
    }
}

fn cmd_train_baseline(m: &ExperimentManifest) -> Result<i32> {
    let prep = prepare(m)?;
    let labels = prep.labels()?;
    let act = m.activation()?;
    let cfgs = m.baseline.configs(m.seed);
    let (summary, runs) = multi_restart(prep.data.values(), labels.values(), m.program.beta, act, &cfgs, None)?;
    let out = start_outputs(m)?;
    std::fs::write(out.join("baseline.csv"), summary.to_csv())?;
    let mut traj = String::new();
    for (i, run) in runs.iter().enumerate() {
        traj.push_str(&run.to_json_lines());
        write_network(&out.join(format!("network_{i:03}.txt")), &run.params, m.program.bias)?;
    }
    std::fs::write(out.join("trajectories.jsonl"), traj)?;
    println!("runs={} best={}", runs.len(), fmt_f64(summary.best));
    Ok(EXIT_OK)
}

fn cmd_compare(m: &ExperimentManifest) -> Result<i32> {
    let prep = prepare(m)?;
    let labels = prep.labels()?.clone();
    if labels.outputs() != 1 {
        return Err(Error::Data("compare expects a single label column".into()));
    }
    let act = m.activation()?;
    let beta = m.program.beta;
    let x = prep.data.values().clone();
    let y = labels.values().clone();
    let set = build_patterns(m, &prep.data)?;
    let prog = ConvexProgram::builder(prep.data.clone(), labels, set)
        .activation(act)
        .beta(beta)
        .reg(RegNorm::from_p(m.program.reg_p)?)
        .build()?;
    let (w, report) = solve_with(m.solver.method, &prog, &m.solver.config)?;
    let convex = prog.objective(&w);
    let net = convex_to_network(&w, act);
    let test_x = prep.test_features(m.program.bias);
    let test_metric = |n: &NetworkParams| -> Result<String> {
        match (&test_x, &prep.test) {
            (Some(tx), Some(t)) => Ok(fmt_f64(mse(&network_forward(n, tx)?, &t.y))),
            _ => Ok(String::new()),
        }
    };
    let mut csv = String::from("method,seed,lr,m,train_objective,test_metric\n");
    csv.push_str(&format!("convex,{},,{},{},{}\n", m.seed, net.neurons(), fmt_f64(convex), test_metric(&net)?));
    let cfgs = m.baseline.configs(m.seed);
    let (summary, runs) = multi_restart(&x, &y, beta, act, &cfgs, Some(convex))?;
    let mut below = 0;
    for run in &runs {
        let c = &run.config;
        let name = match c.optimizer {
            Optimizer::Gd => "gd",
            Optimizer::Sgd => "sgd",
        };
        if run.final_objective < convex - PARITY_TOL * (1.0 + convex.abs()) {
            below += 1;
        }
        csv.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            c.seed,
            fmt_f64(c.lr),
            c.m,
            fmt_f64(run.final_objective),
            test_metric(&run.params)?
        ));
    }
    let out = start_outputs(m)?;
    std::fs::write(out.join("compare.csv"), csv)?;
    write_json(&out.join("report.json"), &report_value(&report))?;
    let mut traj = String::new();
    for run in &runs {
        traj.push_str(&run.to_json_lines());
    }
    std::fs::write(out.join("trajectories.jsonl"), traj)?;
    println!(
        "convex={} best_baseline={} runs={} below_convex={}",
        fmt_f64(convex),
        fmt_f64(summary.best),
        runs.len(),
        below
    );
    Ok(status_code(report.status == SolveStatus::Converged, below == 0))
}

fn cmd_check_stationarity(m: &ExperimentManifest, network: &Path, tol: f64, subsample: bool) -> Result<i32> {
    let prep = prepare(m)?;
    let labels = prep.labels()?;
    let net = NetworkParams::read_file(network)?;
    let beta = m.program.beta;
    let x = &prep.train.x;
    let y = labels.values();
    let report = stationarity_check(&net, x, y, beta, tol)?;
    let out = start_outputs(m)?;
    let mut summary = json!({"command": "check-stationarity", "stationary": report.is_stationary, "report": report});
    let mut ok = report.is_stationary;
    let mut line = format!("stationary={}", report.is_stationary);
    if subsample {
        let merged = net.merge_bias_row();
        let xa = if net.bias.is_some() { augment(x) } else { x.clone() };
        let objective = nonconvex_objective(&merged, &xa, y, beta)?;
        let emb = network_to_convex(&merged, &xa)?;
        let data = if net.bias.is_some() { DataMatrix::with_bias(x.clone())? } else { DataMatrix::new(x.clone())? };
        let prog = ConvexProgram::builder(data, labels.clone(), emb.patterns.clone())
            .activation(merged.activation)
            .beta(beta)
            .build()?;
        let (w, rep) = solve_conic(&prog, &m.solver.config)?;
        let sub = prog.objective(&w);
        let rel = (objective - sub).abs() / objective.abs().max(f64::MIN_POSITIVE);
        ok &= rel <= tol && rep.status == SolveStatus::Converged;
        summary["subsampled"] = json!({"patterns": emb.patterns.len(), "network_objective": objective,
            "convex_objective": sub, "relative_gap": rel});
        line.push_str(&format!(" network={} subsampled={} gap={}", fmt_f64(objective), fmt_f64(sub), fmt_f64(rel)));
    }
    write_json(&out.join("stationarity.json"), &summary)?;
    println!("{line}");
    Ok(if ok { EXIT_OK } else { EXIT_VALIDATION })
}

fn cmd_cnn_linear(m: &ExperimentManifest, patch: usize, stride: usize, padding: usize, gd: bool) -> Result<i32> {
    let prep = prepare(m)?;
    let y = prep.labels()?.column(0);
    let patches = PatchSet::from_signals_1d(&prep.train.x, patch, stride, padding)?;
    let beta = m.program.beta;
    let res = linear_cnn_train(&patches, &y, beta, &m.solver.config)?;
    let objective = res.report.objective;
    let out = start_outputs(m)?;
    let header: Vec<String> = (0..res.filters.ncols()).map(|j| format!("filter{j}")).collect();
    std::fs::write(out.join("filters.csv"), matrix_csv(&header, &res.filters))?;
    let header: Vec<String> = (0..res.z.ncols()).map(|k| format!("z{k}")).collect();
    std::fs::write(out.join("z.csv"), matrix_csv(&header, &res.z))?;
    write_json(&out.join("report.json"), &report_value(&res.report))?;
    let mut summary = json!({"command": "cnn-linear", "objective": objective, "patches": patches.count(),
        "dim": patches.dim(), "rank": res.singular_values.len(),
        "singular_values": res.singular_values.as_slice(), "certificate": res.certificate,
        "certificate_ratio": res.certificate / beta, "reconstruction_error": res.reconstruction_error});
    let mut line = format!(
        "objective={} rank={} certificate/beta={}",
        fmt_f64(objective),
        res.singular_values.len(),
        fmt_f64(res.certificate / beta)
    );
    if gd {
        let cfg: TrainConfig = m.baseline.configs(m.seed).remove(0);
        let run = train_linear_cnn(patches.patches(), &y, beta, &cfg)?;
        let gap = (run.final_objective - objective) / objective.abs().max(f64::MIN_POSITIVE);
        let dist = subspace_distance(&run.product(), &res.filters)?;
        summary["gd"] = json!({"objective": run.final_objective, "relative_gap": gap, "subspace_distance": dist,
                               "seed": cfg.seed, "m": cfg.m, "lr": cfg.lr, "epochs": cfg.epochs});
        line.push_str(&format!(" gd={} gap={} subspace={}", fmt_f64(run.final_objective), fmt_f64(gap), fmt_f64(dist)));
    }
    write_json(&out.join("summary.json"), &summary)?;
    println!("{line}");
    Ok(status_code(res.report.status == SolveStatus::Converged, true))
}

fn cmd_cnn_circular(m: &ExperimentManifest) -> Result<i32> {
    let prep = prepare(m)?;
    let y = prep.labels()?.column(0);
    let x = &prep.train.x;
    let (z, report) = solve_circular_fourier(x, &y, m.program.beta, &m.solver.config)?;
    let net = CircularNetwork::from_spectrum(&z);
    let direct = fourier_features_predict(x, &z);
    let via_net = net.forward(x);
    let mismatch = (0..y.len()).map(|i| (direct[i].re - via_net[i]).abs().max(direct[i].im.abs())).fold(0.0, f64::max);
    let scale = z.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let support: Vec<usize> = (0..z.len()).filter(|&k| z[k].norm() > 1e-6 * scale.max(f64::MIN_POSITIVE)).collect();
    let sym = conjugate_symmetry_error(&z);
    let out = start_outputs(m)?;
    let spectrum = DMatrix::from_fn(z.len(), 3, |k, c| match c {
        0 => k as f64,
        1 => z[k].re,
        _ => z[k].im,
    });
    std::fs::write(out.join("spectrum.csv"), matrix_csv(&["k".into(), "re".into(), "im".into()], &spectrum))?;
    write_json(&out.join("report.json"), &report_value(&report))?;
    write_json(
        &out.join("summary.json"),
        &json!({"command": "cnn-circular", "objective": report.objective, "support": support,
                "conjugate_symmetry_error": sym, "network_mismatch": mismatch,
                "imaginary_residual": net.imaginary_residual}),
    )?;
    println!(
        "objective={} support={:?} symmetry={} mismatch={}",
        fmt_f64(report.objective),
        support,
        fmt_f64(sym),
        fmt_f64(mismatch)
    );
    Ok(status_code(report.status == SolveStatus::Converged, true))
}

fn cmd_lowrank(m: &ExperimentManifest, k: usize, reference: bool) -> Result<i32> {
    let prep = prepare(m)?;
    let labels = prep.labels()?.clone();
    let act = m.activation()?;
    let beta = m.program.beta;
    let patterns = match m.pattern_choice()? {
        PatternChoice::Sampled(count) => LowRankPatterns::Sampled { count, seed: m.seed },
        _ => LowRankPatterns::Exact,
    };
    let res = lowrank_train(&prep.data, &labels, k, beta, act, patterns, &m.solver.config)?;
    let n = prep.data.nrows();
    let out = start_outputs(m)?;
    res.patterns.write_file(&out.join("patterns.txt"))?;
    write_network(&out.join("network.txt"), &res.network, m.program.bias)?;
    let mut summary = json!({"command": "lowrank", "plan": res.plan, "objective": res.objective,
        "approx_convex_objective": res.convex_objective, "patterns": res.patterns.len(),
        "bound_rank_k": count_bound(n, k).to_string(),
        "bound_full_rank": count_bound(n, prep.data.rank()).to_string()});
    let mut line = format!("objective={} ratio={} patterns={}", fmt_f64(res.objective), fmt_f64(res.plan.ratio), res.patterns.len());
    let mut ok = true;
    if reference {
        let set = enumerate_exact_with(&prep.data, &EnumerateConfig::default())?;
        let prog = ConvexProgram::builder(prep.data.clone(), labels, set).activation(act).beta(beta).build()?;
        let (w, _) = solve_conic(&prog, &m.solver.config)?;
        let p_star = prog.objective(&w);
        let slack = 1e-6 * (1.0 + p_star);
        ok = p_star <= res.objective + slack && res.objective <= p_star * res.plan.ratio + slack;
        summary["reference"] = json!({"optimum": p_star, "upper": p_star * res.plan.ratio, "sandwich": ok});
        line.push_str(&format!(" optimum={} sandwich={ok}", fmt_f64(p_star)));
    }
    write_json(&out.join("summary.json"), &summary)?;
    println!("{line}");
    Ok(status_code(res.report.status == SolveStatus::Converged, ok))
}
