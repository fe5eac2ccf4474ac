//! Command-line surface: `dosk fit|predict|tune|bench`.
//!
//! All machine-readable output is JSON/CSV on stdout or at user-given paths;
//! diagnostics go to stderr. Exit codes: 0 success, 2 data/configuration
//! error, 3 solver failure.

mod bench;

pub use bench::{
    run_bench, BenchConfig, BenchDesign, BenchReport, BenchSummary, PlotRow, ReplicateRow,
};

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};

use crate::kernel::{median_heuristic_gamma, KernelSpec};
use crate::loss::LossSpec;
use crate::model::{cross_validate, CvGrid, DoskModel};
use crate::simdata::{self, Standardizer, Task};
use crate::solver::{Hyperparams, SolverConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "dosk",
    version,
    about = "Double sparsity kernel learning: variable selection and support-point extraction for kernel regression and classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on CSV data and save it as JSON.
    Fit(FitArgs),
    /// Predict with a saved model on new CSV data.
    Predict(PredictArgs),
    /// Grid-search hyperparameters by k-fold cross-validation.
    Tune(TuneArgs),
    /// Run a seeded simulation benchmark and report aggregate metrics.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Reg,
    Class,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Reg => Task::Regression,
            TaskArg::Class => Task::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Laplacian,
    Linear,
    Poly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Squared,
    Hinge,
    Deviance,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training data CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    pub label: String,
    #[arg(long, value_enum, default_value_t = TaskArg::Reg)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel: KernelArg,
    /// Kernel bandwidth: a positive number, or `median` for 1/(2·median²)
    /// over pairwise distances of the standardized predictors.
    #[arg(long, default_value = "median")]
    pub gamma: String,
    #[arg(long, default_value_t = 0.25)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda3: f64,
    /// Defaults to `squared` for --task reg and `hinge` for --task class.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Path the fitted model JSON is written to.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep all kernel weights fixed at 1 (no variable selection).
    #[arg(long)]
    pub freeze_w: bool,
    /// Polynomial kernel offset c.
    #[arg(long, default_value_t = 1.0)]
    pub poly_c: f64,
    /// Polynomial kernel degree d.
    #[arg(long, default_value_t = 2)]
    pub poly_degree: u32,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model JSON written by `dosk fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of predictors; include the response column only with --label.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column to score against (adds an evaluation line on stderr).
    #[arg(long)]
    pub label: Option<String>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: String,
    #[arg(long, value_enum, default_value_t = TaskArg::Reg)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel: KernelArg,
    /// Defaults to `squared` for --task reg and `hinge` for --task class.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// λ₁ candidates (comma-separated). Default 0,0.25,0.5.
    #[arg(long, value_delimiter = ',')]
    pub lambda1: Option<Vec<f64>>,
    /// λ₂ candidates (comma-separated). Default 2^-3..2^3.
    #[arg(long, value_delimiter = ',')]
    pub lambda2: Option<Vec<f64>>,
    /// γ candidates (comma-separated). Default 0.1,0.2,…,1.0.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Fixed λ₃ used in every cell.
    #[arg(long, default_value_t = 0.5)]
    pub lambda3: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where the full CV table CSV is written.
    #[arg(long, default_value = "dosk_cv_table.csv")]
    pub table: PathBuf,
    /// Best-cell JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub poly_c: f64,
    #[arg(long, default_value_t = 2)]
    pub poly_degree: u32,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub design: BenchDesign,
    /// Training-set size. Defaults: 100 (regression), 200 (classification).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of appended noise predictors. Defaults: 2 (reg), 8 (class).
    #[arg(long)]
    pub p0: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also fit the frozen-weights (w ≡ 1) reference on every replicate.
    #[arg(long)]
    pub baseline: bool,
    /// Worker threads for replicates; defaults to DOSK_JOBS or all cores.
    #[arg(long, env = "DOSK_JOBS")]
    pub jobs: Option<usize>,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write (x1, y, fitted, is_support) rows for replicate 0's training set.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// Print a human-readable summary table to stderr.
    #[arg(long)]
    pub pretty: bool,
}

/// Parses argv, dispatches, and maps errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the loss from the flag, defaulting by task and rejecting
/// task/loss mismatches.
fn resolve_loss(task: Task, loss: Option<LossArg>) -> Result<LossSpec> {
    let loss = loss.unwrap_or(match task {
        Task::Regression => LossArg::Squared,
        Task::Classification => LossArg::Hinge,
    });
    let spec = match loss {
        LossArg::Squared => LossSpec::squared_error(),
        LossArg::Hinge => LossSpec::huberized_hinge(0.5),
        LossArg::Deviance => LossSpec::deviance(),
    };
    match (task, spec.is_classification()) {
        (Task::Regression, true) => Err(Error::InvalidConfig(
            "margin losses require --task class".into(),
        )),
        (Task::Classification, false) => Err(Error::InvalidConfig(
            "squared loss requires --task reg".into(),
        )),
        _ => Ok(spec),
    }
}

/// Builds the kernel from the CLI flags; `--gamma median` uses the median
/// pairwise distance of the standardized predictors.
fn resolve_kernel(
    kernel: KernelArg,
    gamma: &str,
    poly_c: f64,
    poly_degree: u32,
    x: &Array2<f64>,
) -> Result<KernelSpec> {
    let gamma_value = if gamma == "median" {
        let scaler = Standardizer::fit(x)?;
        median_heuristic_gamma(&scaler.transform(x)?)
    } else {
        gamma.parse::<f64>().map_err(|_| {
            Error::InvalidConfig(format!("--gamma must be a number or `median`, got {gamma:?}"))
        })?
    };
    let spec = match kernel {
        KernelArg::Gaussian => KernelSpec::gaussian(gamma_value),
        KernelArg::Laplacian => KernelSpec::laplacian(gamma_value),
        KernelArg::Linear => KernelSpec::linear(),
        KernelArg::Poly => KernelSpec::polynomial(poly_c, poly_degree),
    };
    spec.validate()?;
    Ok(spec)
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, body)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let task: Task = args.task.into();
    let ds = simdata::read_csv(&args.data, &args.label, task)?;
    let loss = resolve_loss(task, args.loss)?;
    let kernel = resolve_kernel(args.kernel, &args.gamma, args.poly_c, args.poly_degree, &ds.x)?;
    let lambda = Hyperparams::new(args.lambda1, args.lambda2, args.lambda3);
    lambda.validate()?;
    let cfg = SolverConfig {
        seed: args.seed,
        freeze_w: args.freeze_w,
        ..SolverConfig::default()
    };
    let model = DoskModel::fit(&ds.x, &ds.y, kernel, loss, lambda, &cfg)?;
    model.save(&args.out)?;
    let report = serde_json::json!({
        "objective": model.trace_summary.objective,
        "iterations": model.trace_summary.iterations,
        "converged": model.trace_summary.converged,
        "n_selected_vars": model.selected_variables().len(),
        "n_support_points": model.support_points.len(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = DoskModel::load(&args.model)?;
    let classification = model.loss.is_classification();
    let task = if classification {
        Task::Classification
    } else {
        Task::Regression
    };
    let (x, y): (Array2<f64>, Option<Array1<f64>>) = match &args.label {
        Some(label) => {
            let ds = simdata::read_csv(&args.data, label, task)?;
            (ds.x, Some(ds.y))
        }
        None => (simdata::read_csv_features(&args.data)?, None),
    };
    let pred = model.predict(&x)?;

    let mut body = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut body);
        if classification {
            writer.write_record(["prediction", "label"])?;
            for v in pred.iter() {
                let label = if *v >= 0.0 { 1.0 } else { -1.0 };
                writer.write_record([v.to_string(), label.to_string()])?;
            }
        } else {
            writer.write_record(["prediction"])?;
            for v in pred.iter() {
                writer.write_record([v.to_string()])?;
            }
        }
        writer.flush()?;
    }
    write_or_print(
        args.out.as_deref(),
        std::str::from_utf8(&body).expect("CSV output is UTF-8"),
    )?;

    if let Some(y) = y {
        if classification {
            eprintln!("mcr: {}", simdata::mcr(&pred, &y)?);
        } else {
            eprintln!("mpe: {}", simdata::mpe(&pred, &y)?);
        }
    }
    Ok(())
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let task: Task = args.task.into();
    let ds = simdata::read_csv(&args.data, &args.label, task)?;
    let loss = resolve_loss(task, args.loss)?;
    let proto = resolve_kernel(args.kernel, "1.0", args.poly_c, args.poly_degree, &ds.x)?;
    let defaults = CvGrid::default();
    let grid = CvGrid {
        lambda1_candidates: args
            .lambda1
            .clone()
            .unwrap_or(defaults.lambda1_candidates),
        lambda2_candidates: args
            .lambda2
            .clone()
            .unwrap_or(defaults.lambda2_candidates),
        gamma_candidates: args.gamma.clone().unwrap_or(defaults.gamma_candidates),
        lambda3_fixed: args.lambda3,
        folds: args.folds,
    };
    let cfg = SolverConfig {
        seed: args.seed,
        ..SolverConfig::default()
    };
    let outcome = cross_validate(&ds.x, &ds.y, &proto, &loss, &grid, &cfg, args.seed)?;

    let mut writer = csv::Writer::from_path(&args.table)?;
    writer.write_record(["lambda1", "lambda2", "lambda3", "gamma", "score"])?;
    for row in &outcome.table {
        writer.write_record([
            row.lambda1.to_string(),
            row.lambda2.to_string(),
            row.lambda3.to_string(),
            row.gamma.to_string(),
            row.score.to_string(),
        ])?;
    }
    writer.flush()?;

    let mut body = serde_json::to_string_pretty(&outcome.best)?;
    body.push('\n');
    write_or_print(args.out.as_deref(), &body)?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = BenchConfig::new(args.design);
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(p0) = args.p0 {
        cfg.p0 = p0;
    }
    cfg.replicates = args.replicates;
    cfg.seed = args.seed;
    cfg.baseline = args.baseline;
    cfg.jobs = args.jobs;
    cfg.want_plot_data = args.plot_data.is_some();

    let (report, plot_rows, failure) = run_bench(&cfg);

    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    write_or_print(args.out.as_deref(), &body)?;

    if let Some(plot_path) = &args.plot_data {
        let mut writer = csv::Writer::from_path(plot_path)?;
        writer.write_record(["x1", "y", "fitted", "is_support"])?;
        for row in &plot_rows {
            writer.write_record([
                row.x1.to_string(),
                row.y.to_string(),
                row.fitted.to_string(),
                row.is_support.to_string(),
            ])?;
        }
        writer.flush()?;
    }

    if args.pretty {
        eprintln!("{}", bench::render_pretty(&report));
    }

    match failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}
