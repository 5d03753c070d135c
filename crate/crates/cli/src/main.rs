//! `factorkit` command-line interface.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use factorkit::FactorError;
use serde_json::json;

/// Factor model estimation, selection, restrictions, imputation and simulation.
#[derive(Debug, Parser)]
#[command(name = "factorkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate factors and loadings.
    Estimate(EstimateArgs),
    /// Choose the number of factors with both information criteria.
    Select(SelectArgs),
    /// Estimate under linear restrictions on the loadings.
    Constrain(ConstrainArgs),
    /// Fill missing cells with an EM factor model.
    Impute(ImputeArgs),
    /// Run a Monte Carlo sweep over a grid of designs.
    Simulate(SimulateArgs),
    /// Regress one series on factors extracted from the others.
    Regress(RegressArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Apc,
    Pc,
    Rpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VarianceArg {
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct PanelArgs {
    /// Panel CSV: a header of series names, then one row per period.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// CSV with `series,code` rows giving a transformation code per series.
    #[arg(long, value_name = "FILE")]
    transform_codes: Option<PathBuf>,
    /// The line after the header holds transformation codes.
    #[arg(long)]
    codes_row: bool,
    /// Variance divisor used when standardizing.
    #[arg(long, value_enum, default_value_t = VarianceArg::Population)]
    variance: VarianceArg,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory receiving the output files; created if absent.
    #[arg(long, value_name = "DIR", default_value = ".")]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Seed for every randomized step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Rpc)]
    method: MethodArg,
    /// Number of factors; chosen by the regularized criterion when omitted.
    #[arg(long)]
    r: Option<usize>,
    /// Singular-value threshold for rpc (default 0.05).
    #[arg(long)]
    gamma: Option<f64>,
    /// Factor-side penalty; give together with --gamma2.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Loading-side penalty; give together with --gamma1.
    #[arg(long)]
    gamma2: Option<f64>,
    /// Largest candidate when r is chosen automatically.
    #[arg(long, default_value_t = factorkit::selection::DEFAULT_RMAX)]
    rmax: usize,
    /// Use iterated ridge regressions instead of the closed form (rpc only).
    #[arg(long)]
    iterative: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long, default_value_t = factorkit::selection::DEFAULT_RMAX)]
    rmax: usize,
    #[arg(long, default_value_t = factorkit::selection::DEFAULT_GAMMA)]
    gamma: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct ConstrainArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// JSON restriction file; it also fixes the number of factors.
    #[arg(long, value_name = "FILE")]
    restrictions: PathBuf,
    /// Must match the restriction file when given.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, default_value_t = factorkit::selection::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iter: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Factors in the imputation model; chosen on the complete rows when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = factorkit::selection::DEFAULT_RMAX)]
    rmax: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Grid of designs, JSON or CSV.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Replications per design; overrides the grid file.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides the grid file.
    #[arg(long)]
    gamma: Option<f64>,
    /// Overrides the grid file.
    #[arg(long)]
    rmax: Option<usize>,
    #[command(flatten)]
    out: SimulateOutput,
}

#[derive(Debug, Args)]
struct SimulateOutput {
    #[arg(long, value_name = "DIR", default_value = ".")]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Base seed; overrides the grid file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RegressArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Series used as the dependent variable; the rest form the panel.
    #[arg(long)]
    target: String,
    #[command(flatten)]
    fit: FitArgs,
    /// Ridge penalty on the factor coefficients.
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    #[command(flatten)]
    out: OutputArgs,
}

/// How a command that produced output finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Done,
    NotConverged,
}

/// Errors surfaced to the user.
#[derive(Debug)]
enum CliError {
    Factor(FactorError),
    Usage(String),
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        CliError::Factor(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Factor(e.into())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Factor(e) => e.kind(),
            CliError::Usage(_) => "usage",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Factor(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
        }
    }
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

fn report_error(err: &CliError) -> ExitCode {
    let body = json!({ "error": { "kind": err.kind(), "message": err.message() } });
    eprintln!("{body}");
    ExitCode::from(EXIT_VALIDATION)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return report_error(&CliError::Usage(first));
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(&a),
        Command::Select(a) => commands::select(&a),
        Command::Constrain(a) => commands::constrain(&a),
        Command::Impute(a) => commands::impute(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Regress(a) => commands::regress(&a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => report_error(&e),
    }
}
