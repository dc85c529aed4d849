use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mist", version, about = "Penalized likelihood fitting by iterated soft-thresholding")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Write penalty values and derivatives on a grid of |β| as CSV and exit.
    #[arg(long, value_name = "OUT")]
    pub emit_penalty_grid: Option<PathBuf>,

    /// λ used for the penalty grid.
    #[arg(long, default_value_t = 1.0, requires = "emit_penalty_grid")]
    pub grid_lambda: f64,

    /// Worker threads for replicate and grid loops (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one penalized model.
    Fit(FitArgs),
    /// Fit a warm-started sequence of λ values.
    Path(PathArgs),
    /// Replicate simulated fits and compare them with the one-step estimate.
    Simulate(SimulateArgs),
    /// Plain versus SQUAREM map counts on simulated data.
    BenchAccel(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// One closed-form map per iteration (separable majorizer for Poisson).
    SingleMap,
    /// Inner soft-thresholding on the linearized or quadratic surrogate.
    Outer,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,

    /// Response column; the event time column for Cox models.
    #[arg(long, default_value = "y")]
    pub response_col: String,

    /// Event indicator column (Cox only).
    #[arg(long, default_value = "status")]
    pub status_col: String,

    /// Exposure column (Poisson only); unit exposure when absent.
    #[arg(long)]
    pub offset_col: Option<String>,

    /// gaussian, logistic, poisson or cox.
    #[arg(long, default_value = "gaussian")]
    pub family: String,

    /// Omit the unpenalized intercept (always omitted for Cox).
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Penalty as a JSON object, inline or as a file path.
    #[arg(long, default_value = r#"{"family":"lasso","lambda":1.0}"#)]
    pub penalty_json: String,

    /// Solver settings as a JSON object, inline or as a file path.
    #[arg(long)]
    pub solver_json: Option<String>,

    /// zero, mle, one-step or file:PATH (a fit result or a coefficient array).
    #[arg(long, default_value = "zero")]
    pub start: String,

    /// Exponent for adaptive weights derived from the MLE when the penalty
    /// carries none.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,

    /// Overrides the penalty's λ.
    #[arg(long)]
    pub lambda: Option<f64>,

    /// none or squarem.
    #[arg(long, default_value = "none")]
    pub accel: String,

    #[arg(long, value_enum, default_value_t = Method::SingleMap)]
    pub method: Method,

    /// Include the objective trace in JSON output.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,

    /// Comma-separated λ grid; fitted in descending order.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub lambda: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct ScenarioArgs {
    /// ex1 (linear), ex2 (logistic) or cox.
    #[arg(long, default_value = "ex1")]
    pub scenario: String,

    #[arg(long)]
    pub p: Option<usize>,

    /// Number of nonzero true coefficients.
    #[arg(long)]
    pub q: Option<usize>,

    /// Observations per replicate.
    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,

    /// Noise standard deviation (ex1).
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Replicates B.
    #[arg(long, default_value_t = mist::simlab::DEFAULT_REPLICATES)]
    pub replicates: usize,

    /// Standardize design columns.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    /// Comma-separated penalty families.
    #[arg(long, value_delimiter = ',', default_value = "lasso,scad")]
    pub penalties: Vec<String>,

    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,5")]
    pub lambda: Vec<f64>,

    /// Comma-separated starts: zero, mle, one-step.
    #[arg(long, value_delimiter = ',', default_value = "zero,mle,one-step")]
    pub starts: Vec<String>,

    /// Ridge weight ε for the elastic-net families.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,

    /// Shape a for SCAD and MCP.
    #[arg(long, default_value_t = mist::penalty::DEFAULT_A)]
    pub a: f64,

    /// Shape δ for Geman and log penalties.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,

    /// Exponent for adaptive weights from the MLE.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,

    #[arg(long)]
    pub solver_json: Option<String>,

    /// Also write each replicate's data as CSV into this directory.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    #[arg(long, default_value = r#"{"family":"lasso","lambda":1.0}"#)]
    pub penalty_json: String,

    #[arg(long)]
    pub solver_json: Option<String>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}
