//! Command-line front end for the `overcomplete` library.
//!
//! [`dispatch`] parses an argument vector, runs the subcommand on a thread
//! pool sized by `--threads` or `OVERCOMPLETE_THREADS`, and maps the outcome
//! to an exit code.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod repro;

/// Version plus `git describe` output when built from a checkout.
pub const BUILD_ID: &str = env!("OVERCOMPLETE_BUILD_ID");

pub const EXIT_OK: i32 = 0;
pub const EXIT_ALGORITHM: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;

pub const THREADS_ENV: &str = "OVERCOMPLETE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "overcomplete", version = BUILD_ID, about = "Overcomplete tensor decomposition and smoothed-analysis experiments")]
pub struct Cli {
    /// Worker threads; 0 or absent uses all cores. Overrides OVERCOMPLETE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a tensor file into rank-one terms.
    Decompose(DecomposeArgs),
    /// Sweep the smallest singular value of perturbed Khatri-Rao products.
    Krrank(KrrankArgs),
    /// Build or verify ordered orthogonal systems.
    #[command(subcommand)]
    Orthosys(OrthosysCommand),
    /// Multi-view mixture models.
    #[command(subcommand)]
    Multiview(MultiviewCommand),
    /// Axis-aligned Gaussian mixtures.
    #[command(subcommand)]
    Gmm(GmmCommand),
    /// Run the acceptance suite.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    /// Relative floor on sigma_R/sigma_1 of the unfoldings.
    #[arg(long)]
    pub noise_floor: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<usize>,
    /// Contraction pairs to compare.
    #[arg(long)]
    pub contractions: Option<usize>,
    /// Least-squares refinement sweeps (order above three only).
    #[arg(long)]
    pub refine_sweeps: Option<usize>,
    /// Write the condition report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KrrankArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub r_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub order: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rho_list: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// One or more of zero, unit, rank1.
    #[arg(long, value_delimiter = ',', default_value = "zero")]
    pub base: Vec<String>,
    #[arg(long, default_value_t = 1e-9)]
    pub failure_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-point summaries as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Record measured times in the wall_ms column. Without it the column
    /// holds 0 and repeated runs produce byte-identical files.
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum OrthosysCommand {
    /// Build a system inside a subspace of n x m matrices.
    Build(OrthosysBuildArgs),
    /// Check a system file and print the smallest residual.
    Verify(OrthosysVerifyArgs),
}

#[derive(Debug, Args)]
pub struct OrthosysBuildArgs {
    /// Basis matrix with n*m rows, in the tensor text format.
    #[arg(long, required_unless_present = "random_dim", conflicts_with = "random_dim")]
    pub basis: Option<PathBuf>,
    /// Use a random subspace of this dimension instead of a basis file.
    #[arg(long)]
    pub random_dim: Option<usize>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub r: usize,
    #[arg(long)]
    pub s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OrthosysVerifyArgs {
    #[arg(long)]
    pub system: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum MultiviewCommand {
    /// Write a random model.
    Plant(MultiviewPlantArgs),
    /// Draw samples from a model.
    Gen(GenArgs),
    /// Learn a model from samples.
    Learn(MultiviewLearnArgs),
}

#[derive(Debug, Args)]
pub struct MultiviewPlantArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub views: usize,
    #[arg(long)]
    pub rank: usize,
    /// Dirichlet concentration of the view distributions.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Extra concentration on a distinct anchor coordinate per component.
    #[arg(long)]
    pub anchor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MultiviewLearnArgs {
    #[arg(long, required_unless_present = "exact_model")]
    pub samples: Option<PathBuf>,
    /// Learn from the exact moment of this model instead of samples.
    #[arg(long, conflicts_with = "samples")]
    pub exact_model: Option<PathBuf>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Compare against this model and include the errors in the output.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GmmCommand {
    /// Write a random smoothed model.
    Plant(GmmPlantArgs),
    /// Draw samples from a model.
    Gen(GenArgs),
    /// Learn a model from samples.
    Learn(GmmLearnArgs),
}

#[derive(Debug, Args)]
pub struct GmmPlantArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
    /// Norm of the base means before perturbation.
    #[arg(long, default_value_t = 4.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.3)]
    pub var_lo: f64,
    #[arg(long, default_value_t = 0.6)]
    pub var_hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GmmLearnArgs {
    #[arg(long, required_unless_present = "exact_model")]
    pub samples: Option<PathBuf>,
    /// Learn from exact moments of this model instead of samples.
    #[arg(long, conflicts_with = "samples")]
    pub exact_model: Option<PathBuf>,
    #[arg(long)]
    pub k: usize,
    /// Number of coordinate groups; the moment order used is ell and ell+1.
    #[arg(long, default_value_t = 3)]
    pub ell: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Reduced instance counts and sample sizes.
    #[arg(long)]
    pub quick: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only these criteria (1 to 12), without the determinism rerun.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<usize>,
}

/// Errors surfaced by the front end.
#[derive(Debug)]
pub enum CliError {
    Core(overcomplete::Error),
    Usage(String),
    /// A check the command ran did not pass.
    Failed(String),
}

impl From<overcomplete::Error> for CliError {
    fn from(e: overcomplete::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => io.into(),
            other => CliError::Core(overcomplete::Error::Io(std::io::Error::other(format!("{other:?}")))),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

pub fn exit_code(e: &CliError) -> i32 {
    use overcomplete::Error::*;
    match e {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Failed(_) => EXIT_ALGORITHM,
        CliError::Core(e) => match e {
            Io(_) | Parse { .. } | Json(_) => EXIT_IO,
            RankDeficient { .. } | Precondition(_) | BudgetExceeded { .. } | Shape(_) | InvalidArgument(_) | NonFinite(_) => {
                EXIT_PRECONDITION
            }
            NoConvergence { .. }
            | ComplexEigenvalues { .. }
            | Defective(_)
            | RetriesExhausted { .. }
            | ConstructionFailed { .. }
            | DegenerateTerm { .. }
            | AmbiguousMatching(_)
            | IllConditioned { .. } => EXIT_ALGORITHM,
        },
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a thread count, got {v:?}"))),
        _ => Ok(0),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = thread_count(cli.threads).and_then(|threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
        pool.install(|| commands::run(cli.command))
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("overcomplete: {e}");
            exit_code(&e)
        }
    }
}
