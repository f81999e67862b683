//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{load_csv, synthetic, DataError, Dataset, LabelColumn};
use crate::error::AmfError;
use crate::forecasters::{Prediction, Task};
use crate::forest::{AmfForest, DummyClassifier, DummyRegressor, ForestConfig};
use crate::metrics::{auc, progressive_eval, OnlineLearner};
use crate::mondrian::{insert_restricted, plan_restricted, sample_mondrian_pruned, CellBox, RngStream};
use crate::oracle::self_check;
use crate::tree_store::MondrianTree;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_NUMERIC: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

const SWEEP_TREES: [usize; 6] = [1, 2, 5, 10, 20, 50];
const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "amf", version, about = "Online aggregated Mondrian forests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Progressive (predict then update) average loss of AMF and a dummy baseline.
    Online(RunArgs),
    /// Held-out AUC on a 30% split while training online on the rest.
    Auc(RunArgs),
    /// Leaf counts of pruned Mondrian partitions, or leaf depths of grown trees.
    MondrianStats(RunArgs),
    /// Compares the recursive aggregation with brute-force enumeration on random small trees.
    OracleCheck(RunArgs),
    /// Held-out AUC for several forest sizes.
    TreesSweep(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Clf,
    Reg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Input CSV file.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Built-in generator: gauss2, noise or sine.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Number of samples drawn from the generator.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Label column, by index (negative counts from the end) or header name.
    #[arg(long, default_value = "-1", allow_hyphen_values = true)]
    pub label_col: String,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Number of classes; inferred from the labels when absent.
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Label bound for regression; the largest absolute label when absent.
    #[arg(long)]
    pub range_bound: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub n_trees: usize,
    /// Learning rate; 1 for log-loss, 1/(8B²) for square loss when absent.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Steps between recorded points; 1 for `online`, 100 otherwise.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Whether leaves holding a single class keep splitting.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub split_pure: Switch,
    /// Grow restricted trees on this many points and report leaf depths.
    #[arg(long)]
    pub depth_profile: Option<usize>,
    /// Ratio between the largest and smallest density of the depth profile sampler.
    #[arg(long, default_value_t = 1.0)]
    pub density_ratio: f64,
    #[arg(long, hide = true)]
    pub corrupt_weights: bool,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn degenerate(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DEGENERATE, message: message.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::NonNumeric { .. } => EXIT_NON_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<AmfError> for CliError {
    fn from(e: AmfError) -> Self {
        let code = match e {
            AmfError::SingleClass | AmfError::TooFewClasses(_) => EXIT_DEGENERATE,
            _ => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::usage(format!("output: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(command: &Command) -> CliResult<i32> {
    match command {
        Command::Online(a) => cmd_online(a),
        Command::Auc(a) => cmd_auc(a),
        Command::MondrianStats(a) => cmd_mondrian_stats(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::TreesSweep(a) => cmd_trees_sweep(a),
    }
}

fn open_output(args: &RunArgs) -> CliResult<Box<dyn Write>> {
    Ok(match &args.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| CliError::usage(format!("--out {}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn validate_learning_flags(args: &RunArgs) -> CliResult<()> {
    match (&args.data, &args.synthetic) {
        (None, None) => return Err(CliError::usage("one of --data or --synthetic is required")),
        (_, Some(name)) if !["gauss2", "noise", "sine"].contains(&name.as_str()) => {
            return Err(CliError::usage(format!("--synthetic: unknown generator `{name}`")));
        }
        _ => {}
    }
    if args.synthetic.is_some() && args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    if args.n_trees == 0 {
        return Err(CliError::usage("--n-trees must be at least 1"));
    }
    if let Some(eta) = args.eta {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(CliError::usage(format!("--eta must be a positive number, got {eta}")));
        }
    }
    if args.stride == Some(0) {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    if let Some(k) = args.n_classes {
        if k < 2 {
            return Err(CliError::usage(format!("--n-classes must be at least 2, got {k}")));
        }
    }
    if let Some(b) = args.range_bound {
        if !(b > 0.0 && b.is_finite()) {
            return Err(CliError::usage(format!("--range-bound must be a positive number, got {b}")));
        }
    }
    if args.task == Some(TaskArg::Reg) && args.n_classes.is_some() {
        return Err(CliError::usage("--n-classes is only valid with --task clf"));
    }
    Ok(())
}

fn task_arg(args: &RunArgs) -> TaskArg {
    args.task.unwrap_or(match args.synthetic.as_deref() {
        Some("sine") => TaskArg::Reg,
        _ => TaskArg::Clf,
    })
}

fn load(args: &RunArgs) -> CliResult<Dataset> {
    let classification = task_arg(args) == TaskArg::Clf;
    let data = match (&args.data, &args.synthetic) {
        (Some(path), _) => load_csv(path, &LabelColumn::parse(&args.label_col), classification)?,
        (None, Some(name)) => synthetic(name, args.n, args.seed)?,
        (None, None) => unreachable!("validated"),
    };
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    if classification && data.ys.iter().any(|y| y.fract() != 0.0) {
        return Err(CliError::usage("classification labels must be non-negative integers"));
    }
    Ok(data)
}

fn resolve_task(args: &RunArgs, data: &Dataset) -> CliResult<Task> {
    Ok(match task_arg(args) {
        TaskArg::Clf => {
            let k = args.n_classes.unwrap_or_else(|| data.inferred_classes());
            let task = Task::classification(k)?;
            if let Some(y) = data.ys.iter().find(|&&y| y >= k as f64) {
                return Err(CliError::usage(format!("--n-classes {k}: label {y} is out of range")));
            }
            task
        }
        TaskArg::Reg => {
            let bound = args.range_bound.unwrap_or_else(|| {
                let m = data.max_abs_label();
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            });
            let task = Task::regression(bound)?;
            data.ys.iter().try_for_each(|&y| task.check_label(y))?;
            task
        }
    })
}

fn forest_config(args: &RunArgs, task: Task, n_trees: usize) -> ForestConfig {
    let mut config = ForestConfig::new(task)
        .with_trees(n_trees)
        .with_seed(args.seed)
        .with_split_pure(args.split_pure == Switch::On);
    if let Some(eta) = args.eta {
        config = config.with_eta(eta);
    }
    config
}

fn cmd_online(args: &RunArgs) -> CliResult<i32> {
    validate_learning_flags(args)?;
    let data = load(args)?;
    let task = resolve_task(args, &data)?;
    let mut forest = AmfForest::new(forest_config(args, task, args.n_trees), data.dim())?;
    let stride = args.stride.unwrap_or(1);
    let curves = match task {
        Task::Classification { n_classes } => {
            let mut dummy = DummyClassifier::new(n_classes)?;
            let mut learners: [(&str, &mut dyn OnlineLearner); 2] = [("amf", &mut forest), ("dummy", &mut dummy)];
            progressive_eval(&mut learners, &data.xs, &data.ys, task.loss_kind(), stride)?
        }
        Task::Regression { .. } => {
            let mut dummy = DummyRegressor::default();
            let mut learners: [(&str, &mut dyn OnlineLearner); 2] = [("amf", &mut forest), ("dummy", &mut dummy)];
            progressive_eval(&mut learners, &data.xs, &data.ys, task.loss_kind(), stride)?
        }
    };
    let mut out = open_output(args)?;
    writeln!(out, "t,avg_loss_amf,avg_loss_dummy")?;
    for (a, d) in curves[0].points.iter().zip(&curves[1].points) {
        writeln!(out, "{},{},{}", a.0, a.1, d.1)?;
    }
    out.flush()?;
    Ok(EXIT_OK)
}

/// Train/test split for the binary AUC commands.
fn binary_split(args: &RunArgs) -> CliResult<(Dataset, Dataset, Task)> {
    validate_learning_flags(args)?;
    if task_arg(args) == TaskArg::Reg {
        return Err(CliError::usage("--task reg: AUC needs binary class labels"));
    }
    if let Some(k) = args.n_classes {
        if k != 2 {
            return Err(CliError::degenerate(format!("--n-classes {k}: AUC needs exactly 2 classes")));
        }
    }
    let data = load(args)?;
    if data.inferred_classes() != 2 {
        return Err(CliError::degenerate("AUC needs binary labels in {0, 1}"));
    }
    let (train, test) = data.split(0.7, args.seed);
    let has = |c: f64| test.ys.contains(&c);
    if !(has(0.0) && has(1.0)) {
        return Err(CliError::degenerate("test split does not contain both classes"));
    }
    if train.is_empty() {
        return Err(CliError::degenerate("training split is empty"));
    }
    Ok((train, test, Task::Classification { n_classes: 2 }))
}

fn held_out_auc(learner: &dyn OnlineLearner, test: &Dataset) -> CliResult<f64> {
    let labels: Vec<bool> = test.ys.iter().map(|&y| y == 1.0).collect();
    let scores = test
        .xs
        .iter()
        .map(|x| match learner.predict(x)? {
            Prediction::Proba(p) => Ok(p[1]),
            Prediction::Value(v) => Ok(v),
        })
        .collect::<crate::error::Result<Vec<f64>>>()?;
    Ok(auc(&scores, &labels)?)
}

fn cmd_auc(args: &RunArgs) -> CliResult<i32> {
    let (train, test, task) = binary_split(args)?;
    let stride = args.stride.unwrap_or(100);
    let mut forest = AmfForest::new(forest_config(args, task, args.n_trees), train.dim())?;
    let mut dummy = DummyClassifier::new(2)?;
    let mut rows = Vec::new();
    for (t, (x, &y)) in train.xs.iter().zip(&train.ys).enumerate() {
        forest.learn_one(x, y)?;
        dummy.learn_one(y)?;
        let step = t + 1;
        if step % stride == 0 || step == train.len() {
            rows.push((step, held_out_auc(&forest, &test)?, held_out_auc(&dummy, &test)?));
        }
    }
    let mut out = open_output(args)?;
    writeln!(out, "t,auc_amf,auc_dummy")?;
    for (t, a, d) in rows {
        writeln!(out, "{t},{a},{d}")?;
    }
    out.flush()?;
    Ok(EXIT_OK)
}

fn cmd_trees_sweep(args: &RunArgs) -> CliResult<i32> {
    let (train, test, task) = binary_split(args)?;
    let mut rows = Vec::with_capacity(SWEEP_TREES.len());
    for m in SWEEP_TREES {
        let mut forest = AmfForest::new(forest_config(args, task, m), train.dim())?;
        forest.partial_fit(&train.xs, &train.ys)?;
        rows.push((m, held_out_auc(&forest, &test)?));
    }
    let mut out = open_output(args)?;
    writeln!(out, "n_trees,auc")?;
    for (m, a) in rows {
        writeln!(out, "{m},{a}")?;
    }
    out.flush()?;
    Ok(EXIT_OK)
}

/// Summary of the leaf counts of `reps` pruned Mondrian partitions of the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafStats {
    pub mean: f64,
    pub stderr: f64,
    pub expected: f64,
}

pub fn mondrian_leaf_stats(dim: usize, lambda: f64, reps: usize, seed: u64) -> crate::error::Result<LeafStats> {
    let cell = CellBox::unit(dim);
    let mut rng = RngStream::new(seed, 0x1eaf);
    let task = Task::Regression { range_bound: 1.0 };
    let counts = (0..reps)
        .map(|_| sample_mondrian_pruned(&cell, lambda, task, &mut rng).map(|t| t.leaf_count() as f64))
        .collect::<crate::error::Result<Vec<f64>>>()?;
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(LeafStats { mean, stderr: (var / n).sqrt(), expected: (1.0 + lambda).powi(dim as i32) })
}

/// Point of `[0,1]^dim` whose density is `2M/(M+1)` on `x_0 < ½` and `2/(M+1)` elsewhere.
fn skewed_point(rng: &mut RngStream, dim: usize, ratio: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
    let low_half = rng.uniform() < ratio / (ratio + 1.0);
    x[0] = if low_half { 0.5 * x[0] } else { 0.5 + 0.5 * x[0] };
    x
}

/// Mean depth of the leaf a fresh point would occupy once inserted into a
/// restricted tree grown on `n` points, over `reps` trees and `queries` points per tree.
pub fn mean_leaf_depth(n: usize, dim: usize, ratio: f64, reps: usize, queries: usize, seed: u64) -> crate::error::Result<f64> {
    let mut total = 0.0;
    for r in 0..reps {
        let mut rng = RngStream::new(seed, 0xde97 + r as u64);
        let mut tree = MondrianTree::new(dim, Task::Regression { range_bound: 1.0 })?;
        for _ in 0..n {
            let x = skewed_point(&mut rng, dim, ratio);
            insert_restricted(&mut tree, &x, &mut rng)?;
        }
        for _ in 0..queries {
            let x = skewed_point(&mut rng, dim, ratio);
            total += match plan_restricted(&tree, &x, &mut rng)? {
                Some(v) => tree.depth_of(v.host) + 1,
                None => tree.depth_of(tree.leaf_containing(&x)),
            } as f64;
        }
    }
    Ok(total / (reps * queries) as f64)
}

/// `log n / log(2M/(2M−1)) + 2M`.
pub fn depth_bound(n: usize, ratio: f64) -> f64 {
    (n as f64).ln() / (2.0 * ratio / (2.0 * ratio - 1.0)).ln() + 2.0 * ratio
}

fn cmd_mondrian_stats(args: &RunArgs) -> CliResult<i32> {
    if args.dim == 0 {
        return Err(CliError::usage("--dim must be at least 1"));
    }
    if args.reps == Some(0) {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    if let Some(n) = args.depth_profile {
        if n == 0 {
            return Err(CliError::usage("--depth-profile must be at least 1"));
        }
        if !(args.density_ratio >= 1.0 && args.density_ratio.is_finite()) {
            return Err(CliError::usage(format!("--density-ratio must be >= 1, got {}", args.density_ratio)));
        }
        let reps = args.reps.unwrap_or(20);
        let depth = mean_leaf_depth(n, args.dim, args.density_ratio, reps, 200, args.seed)?;
        let mut out = open_output(args)?;
        writeln!(out, "n,dim,density_ratio,mean_depth,bound")?;
        writeln!(out, "{n},{},{},{depth},{}", args.dim, args.density_ratio, depth_bound(n, args.density_ratio))?;
        out.flush()?;
        return Ok(EXIT_OK);
    }
    if !(args.lambda > 0.0 && args.lambda.is_finite()) {
        return Err(CliError::usage(format!("--lambda must be a positive number, got {}", args.lambda)));
    }
    let reps = args.reps.unwrap_or(10_000);
    let s = mondrian_leaf_stats(args.dim, args.lambda, reps, args.seed)?;
    let mut out = open_output(args)?;
    writeln!(out, "dim,lambda,reps,mean_leaves,stderr,expected")?;
    writeln!(out, "{},{},{reps},{},{},{}", args.dim, args.lambda, s.mean, s.stderr, s.expected)?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn cmd_oracle_check(args: &RunArgs) -> CliResult<i32> {
    let reps = args.reps.unwrap_or(200);
    if reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let worst = self_check(reps, args.seed, args.corrupt_weights)?;
    let mut out = open_output(args)?;
    writeln!(out, "reps,max_abs_discrepancy")?;
    writeln!(out, "{reps},{worst:e}")?;
    out.flush()?;
    Ok(if worst <= ORACLE_TOLERANCE { EXIT_OK } else { EXIT_CHECK_FAILED })
}
