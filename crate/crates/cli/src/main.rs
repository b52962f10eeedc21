//! `mvr`: fit mean-variance regressions on CSV data, test for
//! heteroskedasticity, and run the Monte Carlo grid.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mvr_core::inference::{conf_interval, het_test, robust_std_errors, sandwich, std_errors};
use mvr_core::simulation::{
    calibrate_z, exact_z, ratio_table, rejection_curve, run_grid, EstimatorKind, Metric, DEFAULT_REGRESSORS,
};
use mvr_core::{
    fit_mvr, fit_ols, fit_wls, Dataset, FitResult, MvrError, Rng, ScaleFamily, SolverOptions, VcovRegime,
    WaldResult, WlsVariant,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "mvr", version, about = "Simultaneous mean-variance regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file (first column is the outcome) and write a JSON report.
    Fit {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Mvr)]
        estimator: EstimatorArg,
        #[command(flatten)]
        model: ModelArgs,
        /// Confidence level of the reported intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Robust Wald test that all non-intercept scale coefficients are zero.
    Hettest {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run the Monte Carlo grid and write TSV tables.
    Simulate {
        /// Sample sizes, comma-separated.
        #[arg(long = "n", value_delimiter = ',', default_values_t = [20, 40, 80, 160, 320, 640, 1280])]
        ns: Vec<usize>,
        /// Heteroskedasticity levels, comma-separated.
        #[arg(long = "alpha", value_delimiter = ',', allow_hyphen_values = true,
              default_values_t = [0.0, 0.5, 1.0, 1.5, 2.0])]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 20240101)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Normalising constant of the simulation design, exact and by Monte Carlo.
    Calibrate {
        #[arg(long = "alpha", value_delimiter = ',', allow_hyphen_values = true,
              default_values_t = [0.0, 0.5, 1.0, 1.5, 2.0])]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long, default_value_t = 20240101)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct IoArgs {
    /// CSV with a header row; the first column is the outcome.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Linear)]
    scale: ScaleArg,
    #[arg(long, value_enum, default_value_t = VcovArg::General)]
    vcov: VcovArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Mvr,
    Ols,
    WlsL,
    WlsE,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Linear,
    Exp,
}

impl From<ScaleArg> for ScaleFamily {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Linear => ScaleFamily::Linear,
            ScaleArg::Exp => ScaleFamily::Exponential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VcovArg {
    General,
    CorrectMean,
    CorrectSpec,
}

impl From<VcovArg> for VcovRegime {
    fn from(v: VcovArg) -> Self {
        match v {
            VcovArg::General => VcovRegime::General,
            VcovArg::CorrectMean => VcovRegime::CorrectMean,
            VcovArg::CorrectSpec => VcovRegime::CorrectMeanVariance,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Model(MvrError),
    Io(String),
    Csv(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Model(e) => e.kind(),
            CliError::Io(_) => "IoError",
            CliError::Csv(_) => "CsvError",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Model(e) => e.to_string(),
            CliError::Io(m) | CliError::Csv(m) => m.clone(),
        }
    }
}

impl From<MvrError> for CliError {
    fn from(e: MvrError) -> Self {
        CliError::Model(e)
    }
}

#[derive(Serialize)]
struct ErrorReport {
    schema_version: u32,
    error: &'static str,
    message: String,
}

#[derive(Serialize)]
struct Coefficient {
    name: String,
    estimate: f64,
    std_error: f64,
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    converged: bool,
    on_boundary: bool,
    iterations: usize,
    grad_norm: f64,
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    estimator: &'static str,
    /// MVR only.
    scale: Option<&'static str>,
    /// `hc0` for least-squares estimators.
    vcov: &'static str,
    level: f64,
    n: usize,
    k: usize,
    coefficients: Vec<Coefficient>,
    scale_coefficients: Option<Vec<Coefficient>>,
    loss: f64,
    diagnostics: Diagnostics,
    het_test: Option<WaldResult>,
}

#[derive(Serialize)]
struct HetReport {
    schema_version: u32,
    scale: &'static str,
    vcov: &'static str,
    n: usize,
    statistic: f64,
    df: usize,
    p_value: f64,
}

fn vcov_name(v: VcovArg) -> &'static str {
    match v {
        VcovArg::General => "general",
        VcovArg::CorrectMean => "correct-mean",
        VcovArg::CorrectSpec => "correct-spec",
    }
}

fn scale_name(s: ScaleArg) -> &'static str {
    match s {
        ScaleArg::Linear => "linear",
        ScaleArg::Exp => "exp",
    }
}

fn read_csv(path: &Path) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| CliError::Csv(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    let cols = header.len().max(1);
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Csv(e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Csv(format!("row {}, column {}: cannot parse {field:?} as a number", line + 1, j + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(MvrError::TooFewRows { n: 0, k: cols }.into());
    }
    let regressors = DMatrix::from_fn(rows, cols - 1, |i, j| values[i * cols + j + 1]);
    let y = DVector::from_fn(rows, |i, _| values[i * cols]);
    Ok(Dataset::with_intercept(y, regressors, header[1..].to_vec())?)
}

fn write_out(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn coefficients(names: &[String], est: &DVector<f64>, se: &DVector<f64>, level: f64) -> Result<Vec<Coefficient>, MvrError> {
    names
        .iter()
        .zip(est.iter().zip(se.iter()))
        .map(|(name, (&estimate, &std_error))| {
            let (ci_lower, ci_upper) = conf_interval(estimate, std_error, level)?;
            Ok(Coefficient { name: name.clone(), estimate, std_error, ci_lower, ci_upper })
        })
        .collect()
}

fn diagnostics(fit: &FitResult) -> Diagnostics {
    Diagnostics {
        converged: fit.converged,
        on_boundary: fit.on_boundary,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
    }
}

fn fit_or_fail(data: &Dataset, family: ScaleFamily) -> Result<FitResult, MvrError> {
    let fit = fit_mvr(data, family, &SolverOptions::default())?;
    if !(fit.converged || fit.on_boundary) {
        return Err(MvrError::Solver(format!("stopped after {} iterations, gradient norm {:e}", fit.iterations, fit.grad_norm)));
    }
    Ok(fit)
}

fn cmd_fit(io: &IoArgs, estimator: EstimatorArg, model: &ModelArgs, level: f64) -> Result<(), CliError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MvrError::BadLevel(level).into());
    }
    let data = read_csv(&io.input)?;
    let names = data.column_names().to_vec();
    let report = match estimator {
        EstimatorArg::Mvr => {
            let fit = fit_or_fail(&data, model.scale.into())?;
            let v = sandwich(&data, &fit, model.vcov.into())?;
            let (se_b, se_g) = std_errors(&v, data.n())?;
            let het = if data.k() >= 2 { Some(het_test(&fit, &v, data.n())?) } else { None };
            FitReport {
                schema_version: SCHEMA_VERSION,
                estimator: "mvr",
                scale: Some(scale_name(model.scale)),
                vcov: vcov_name(model.vcov),
                level,
                n: data.n(),
                k: data.k(),
                coefficients: coefficients(&names, fit.beta(), &se_b, level)?,
                scale_coefficients: Some(coefficients(&names, fit.gamma(), &se_g, level)?),
                loss: fit.loss,
                diagnostics: diagnostics(&fit),
                het_test: het,
            }
        }
        EstimatorArg::Ols | EstimatorArg::WlsL | EstimatorArg::WlsE => {
            let (fit, label) = match estimator {
                EstimatorArg::Ols => (fit_ols(&data)?, "ols"),
                EstimatorArg::WlsL => (fit_wls(&data, WlsVariant::linear())?, "wls-l"),
                _ => (fit_wls(&data, WlsVariant::exponential())?, "wls-e"),
            };
            let se = robust_std_errors(&data, &fit)?;
            FitReport {
                schema_version: SCHEMA_VERSION,
                estimator: label,
                scale: None,
                vcov: "hc0",
                level,
                n: data.n(),
                k: data.k(),
                coefficients: coefficients(&names, fit.beta(), &se, level)?,
                scale_coefficients: None,
                loss: fit.loss,
                diagnostics: diagnostics(&fit),
                het_test: None,
            }
        }
    };
    write_out(io.output.as_deref(), &to_json(&report))
}

fn cmd_hettest(io: &IoArgs, model: &ModelArgs) -> Result<(), CliError> {
    let data = read_csv(&io.input)?;
    if data.k() < 2 {
        return Err(MvrError::InterceptOnly.into());
    }
    let fit = fit_or_fail(&data, model.scale.into())?;
    let v = sandwich(&data, &fit, model.vcov.into())?;
    let w = het_test(&fit, &v, data.n())?;
    let report = HetReport {
        schema_version: SCHEMA_VERSION,
        scale: scale_name(model.scale),
        vcov: vcov_name(model.vcov),
        n: data.n(),
        statistic: w.statistic,
        df: w.df,
        p_value: w.p_value,
    };
    write_out(io.output.as_deref(), &to_json(&report))
}

fn cmd_simulate(ns: &[usize], alphas: &[f64], reps: usize, seed: u64, output: Option<&Path>) -> Result<(), CliError> {
    use EstimatorKind::{MvrExp, MvrLinear, Ols, WlsExp, WlsLinear};
    let estimators = [MvrLinear, MvrExp, Ols, WlsLinear, WlsExp];
    let grid = run_grid(ns, alphas, reps, seed, &estimators)?;
    let mut out = format!("# grid: reps={reps} seed={seed}\n\n");
    let pairs = [(MvrLinear, Ols), (MvrExp, Ols), (MvrLinear, WlsLinear), (MvrExp, WlsExp)];
    for (metric, what) in [(Metric::Rmse, "RMSE"), (Metric::CiLength, "mean CI length")] {
        for (est, base) in pairs {
            let t = ratio_table(&grid, metric, est, base)?;
            out.push_str(&t.to_tsv(&format!("Ratio (x100) of {what} for beta_4: {} over {}", est.name(), base.name())));
            out.push('\n');
        }
    }
    for est in estimators {
        let c = rejection_curve(&grid, est)?;
        out.push_str(&c.to_tsv(&format!("Rejection frequency of the 5% t test of beta_4 = 1: {}", est.name())));
        out.push('\n');
    }
    write_out(output, &out)
}

fn cmd_calibrate(alphas: &[f64], draws: usize, seed: u64, output: Option<&Path>) -> Result<(), CliError> {
    let gamma = DVector::from_element(DEFAULT_REGRESSORS + 1, 1.0);
    let rng = Rng::new(seed);
    let mut out = format!("# normalising constant z(alpha): draws={draws} seed={seed}\nalpha\texact\tmonte_carlo\tse\n");
    for &alpha in alphas {
        let mc = calibrate_z(alpha, draws, &rng)?;
        let exact = exact_z(alpha, &gamma).map_or("NA".to_string(), |z| format!("{z:.6}"));
        out.push_str(&format!("{alpha}\t{exact}\t{:.6}\t{:.2e}\n", mc.z, mc.se));
    }
    write_out(output, &out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit { io, estimator, model, level } => cmd_fit(io, *estimator, model, *level),
        Command::Hettest { io, model } => cmd_hettest(io, model),
        Command::Simulate { ns, alphas, reps, seed, output } => cmd_simulate(ns, alphas, *reps, *seed, output.as_deref()),
        Command::Calibrate { alphas, draws, seed, output } => cmd_calibrate(alphas, *draws, *seed, output.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport { schema_version: SCHEMA_VERSION, error: e.kind(), message: e.message() };
            eprint!("{}", to_json(&report));
            ExitCode::FAILURE
        }
    }
}
