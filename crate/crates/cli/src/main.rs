mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use archscale_core::scaling_law::DcritForm;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
    Svg,
}

fn parse_form(s: &str) -> Result<DcritForm, String> {
    s.parse().map_err(|e: archscale_core::Error| e.to_string())
}

/// Architecture-conditioned scaling laws: fit, predict, audit and plan
/// transformer shapes.
#[derive(Debug, Parser)]
#[command(name = "archscale", version)]
pub struct Cli {
    /// Seed for every random stream (fitting starts, bootstrap, simulation).
    #[arg(long, global = true, default_value_t = archscale_core::rng::DEFAULT_SEED)]
    pub seed: u64,

    /// Critical-depth constant κ in D_crit = κ·ln W. Defaults to 2.43; for
    /// `fit` an explicit value pins κ instead of fitting it.
    #[arg(long, global = true)]
    pub kappa: Option<f64>,

    /// Critical-depth form: `log` (κ·ln W) or `power` (c·W^a).
    #[arg(long = "dcrit-form", global = true, default_value = "log", value_parser = parse_form)]
    pub dcrit_form: DcritForm,

    /// Output format. Not every subcommand supports every format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Write results to this file instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// `key = value` file supplying defaults for any long flag; flags given on
    /// the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the loss model to a dataset.
    Fit(FitArgs),
    /// Predict loss for one architecture.
    Predict(PredictArgs),
    /// Critical depth for one or more widths.
    Dcrit(DcritArgs),
    /// Compare model depths against their critical depth.
    Audit(AuditArgs),
    /// Search the compute-optimal shape for a FLOP budget.
    Plan(PlanArgs),
    /// Simulate backward signal decay through random residual blocks.
    Simulate(SimulateArgs),
    /// Check the headline loss orderings in a dataset.
    Verify(DataArgs),
    /// Summary of every analysis on the bundled data.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// `bundled` or a CSV path (header `depth,width,tokens_billions,loss,scale_group`).
    /// ARCHSCALE_DATA replaces the bundled file when set.
    #[arg(long, default_value = "bundled")]
    pub data: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Scale group to fit: baseline, oneb, threeb, sevenb or all. Groups
    /// without token counts get a fitted per-group offset.
    #[arg(long, default_value = "baseline")]
    pub group: String,

    /// Bootstrap resamples; 0 skips the intervals.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,

    /// Optimizer starts.
    #[arg(long, default_value_t = 5)]
    pub starts: usize,

    /// Extra parameters to fit (a, alpha, b, delta, gamma, mu, kappa, tau_c, tau_a).
    #[arg(long = "free", value_delimiter = ',')]
    pub free: Vec<String>,

    /// Pin a parameter, as `name=value`. Repeatable.
    #[arg(long = "fix", value_delimiter = ',')]
    pub fix: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub depth: u64,

    #[arg(long)]
    pub width: u64,

    /// Training tokens (e.g. 6.4e9).
    #[arg(long, conflicts_with = "compute", required_unless_present = "compute")]
    pub tokens: Option<f64>,

    /// Training FLOPs; tokens follow from C = 6·N·T.
    #[arg(long)]
    pub compute: Option<f64>,

    /// Itemise the parameter count and each loss term.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Debug, Args)]
pub struct DcritArgs {
    /// Width(s), comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    pub width: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Use the five built-in published models (default without --roster).
    #[arg(long)]
    pub builtin: bool,

    /// Roster CSV with header `name,depth,width`.
    #[arg(long, conflicts_with = "builtin")]
    pub roster: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// FLOP budget. Defaults to the 7B optimal run (5.89e21).
    #[arg(long)]
    pub budget: Option<f64>,

    /// Budgets for the exponent regression, comma separated (at least 4, two decades).
    #[arg(long, value_delimiter = ',', conflicts_with = "budget")]
    pub sweep: Vec<f64>,

    #[arg(long, default_value_t = 1)]
    pub min_depth: u64,

    #[arg(long, default_value_t = 256)]
    pub max_depth: u64,

    #[arg(long, default_value_t = 256)]
    pub min_width: u64,

    #[arg(long, default_value_t = 32768)]
    pub max_width: u64,

    /// Width grid spacing.
    #[arg(long, default_value_t = 64)]
    pub width_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Matrix,
    Recursion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Projected,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Norm,
    Squared,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Width(s); three or more run a τ sweep with both τ(W) fits.
    #[arg(long, required = true, value_delimiter = ',')]
    pub width: Vec<u64>,

    /// Fixed depth. Defaults to ceil(3·D_crit(W)) per width.
    #[arg(long)]
    pub depth: Option<u64>,

    /// Residual-branch scale σ.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    #[arg(long, default_value_t = 64)]
    pub trials: u64,

    #[arg(long, value_enum, default_value_t = ModeArg::Matrix)]
    pub mode: ModeArg,

    #[arg(long, value_enum, default_value_t = SamplerArg::Projected)]
    pub sampler: SamplerArg,

    /// How per-trial gradient norms are averaged.
    #[arg(long, value_enum, default_value_t = AggregationArg::Norm)]
    pub aggregation: AggregationArg,

    /// Largest number of random draws allowed.
    #[arg(long, default_value_t = archscale_core::gradsim::DEFAULT_WORK_CAP)]
    pub work_cap: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Bootstrap resamples for the baseline fit.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or inputs: exit 1.
    Invalid(String),
    /// A verification check failed: exit 1.
    Checks(String),
    /// Numerical non-convergence: exit 2.
    NonConvergence(String),
}

impl From<archscale_core::Error> for Failure {
    fn from(e: archscale_core::Error) -> Self {
        if e.is_non_convergence() {
            Failure::NonConvergence(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let argv = match config::merged_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Checks(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::NonConvergence(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
