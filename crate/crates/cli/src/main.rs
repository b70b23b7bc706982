//! robustinfer — heteroskedasticity-robust OLS inference from the shell.
//!
//! Four workflows over a CSV input:
//!
//! * `fit` — per-coefficient estimates with the requested robust standard
//!   errors, degrees of freedom, p-values and confidence intervals, plus the
//!   leverage diagnostics (ñ_k, h_max, leverage-one count).
//! * `bootstrap` — restricted wild-bootstrap p-values (`wb-θη` specs).
//! * `calibrate-dgp` — fits candidate variance processes to the residuals
//!   and writes the selected σ vector as a JSON artifact.
//! * `mc` — Monte Carlo rejection rates of the chosen specs on the design,
//!   optionally under a σ vector from `calibrate-dgp` or a CSV column.
//!
//! All reports embed `schema_version` and the resolved configuration. Runs
//! are deterministic per seed: the thread count (`--threads` or
//! ROBUSTINFER_THREADS) changes wall time, never output bytes.

mod commands;
mod ingest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robustinfer_core::H1Policy;

/// A failure with its process exit code: 2 config, 3 data, 4 numerics.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<robustinfer_core::Error> for CliError {
    fn from(e: robustinfer_core::Error) -> Self {
        use robustinfer_core::Error as E;
        match &e {
            E::InvalidConfig(_)
            | E::IndexOutOfRange { .. }
            | E::InvalidB { .. }
            | E::EmptyInput { .. }
            | E::DimensionMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "robustinfer", version, about = "Robust OLS inference and Monte Carlo size studies")]
struct Cli {
    /// Worker threads (0 = all cores). Affects speed only, never results.
    #[arg(long, global = true, env = "ROBUSTINFER_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit OLS and report robust tests for every coefficient
    Fit(FitArgs),
    /// Restricted wild-bootstrap p-values
    Bootstrap(BootstrapArgs),
    /// Calibrate a heteroskedastic error process from the residuals
    CalibrateDgp(CalibrateArgs),
    /// Monte Carlo rejection-rate study on the design
    Mc(McArgs),
}

#[derive(Args)]
pub struct InputArgs {
    /// Input CSV (header row, UTF-8, '.' decimal separator)
    #[arg(long)]
    pub input: PathBuf,
    /// Numeric regressor column (repeatable)
    #[arg(long = "x")]
    pub x: Vec<String>,
    /// Categorical column to one-hot expand dropping the first level
    /// (repeatable; the dummies join the design automatically)
    #[arg(long)]
    pub expand: Vec<String>,
    /// Suppress the implicit intercept column
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Zero out leverage-one observations in the variance
    Zero,
    /// Recompute the variance with leverage-one observations omitted
    Omit,
}

impl PolicyArg {
    pub fn to_policy(self) -> H1Policy {
        match self {
            PolicyArg::Zero => H1Policy::ZeroOut,
            PolicyArg::Omit => H1Policy::OmitObs,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
pub struct OutputArgs {
    /// Output file; stdout when omitted. `mc` additionally writes
    /// <out>.cells.csv and <out>.curve.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of the primary report
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Response column
    #[arg(long)]
    pub y: String,
    /// Cluster column: adds the clustered effective sample size G̃ to the
    /// diagnostics
    #[arg(long)]
    pub cluster: Option<String>,
    /// Specification names (repeatable); default: every t-test spec
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    /// Leverage-one observation policy
    #[arg(long = "h1-policy", value_enum, default_value_t = PolicyArg::Zero)]
    pub h1_policy: PolicyArg,
    /// Test level for confidence intervals
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Response column
    #[arg(long)]
    pub y: String,
    /// Bootstrap specs wb-θη with θ,η ∈ {1,2,3} (repeatable); default wb-11
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    /// Coefficient (design column name) to test; repeatable; default all
    #[arg(long = "coef")]
    pub coefficients: Vec<String>,
    /// Bootstrap replications
    #[arg(long = "B", default_value_t = 999)]
    pub b: usize,
    /// Seed for the Rademacher streams
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Response column
    #[arg(long)]
    pub y: String,
    /// Pilot samples per calibration/scoring stage (≥ 100)
    #[arg(long = "m-pilot", default_value_t = 500)]
    pub m_pilot: usize,
    /// Trees in the variance forest (default 200)
    #[arg(long)]
    pub trees: Option<usize>,
    /// Minimum observations per leaf (default 5)
    #[arg(long = "min-leaf")]
    pub min_leaf: Option<usize>,
    /// Features tried per split (default K/3, at least 1)
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file for the JSON artifact; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct McArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// CSV column holding the per-row error sd (default: 1.0 everywhere)
    #[arg(long = "sigma-col")]
    pub sigma_col: Option<String>,
    /// calibrate-dgp artifact supplying the σ vector
    #[arg(long, conflicts_with = "sigma_col")]
    pub dgp: Option<PathBuf>,
    /// Specification names (repeatable); default: every t-test spec.
    /// wb-θη specs are accepted but cost B extra regressions per sample
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    /// Leverage-one observation policy
    #[arg(long = "h1-policy", value_enum, default_value_t = PolicyArg::Zero)]
    pub h1_policy: PolicyArg,
    /// Coefficient names to test (repeatable); default: first 25 columns
    #[arg(long = "coef")]
    pub coefficients: Vec<String>,
    /// Nominal test level
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Monte Carlo samples
    #[arg(long = "M", default_value_t = 10_000)]
    pub m: usize,
    /// Wild-bootstrap replications per sample (wb specs only)
    #[arg(long = "B", default_value_t = 99)]
    pub b: usize,
    /// Base seed for all error draws
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Sizing can only fail if a pool already exists (tests); harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Bootstrap(args) => commands::bootstrap(&args),
        Command::CalibrateDgp(args) => commands::calibrate_dgp(&args),
        Command::Mc(args) => commands::mc(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
