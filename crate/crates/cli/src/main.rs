//! `survsdr` command-line front end: fits on CSV data, simulation studies and
//! bootstrap inference. Every run writes its artifacts plus a `manifest.json`
//! into `--out`; passing that manifest back as `--config` repeats the run.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use survsdr::nonparam::WidthRule;
use survsdr::{EstimatorKind, FitConfig};

#[derive(Parser, Debug)]
#[command(name = "survsdr", version, about = "Sufficient dimension reduction for right-censored survival data")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the central subspace from a CSV file.
    Fit(FitArgs),
    /// Run a replication study on one of the built-in simulation settings.
    Simulate(SimulateArgs),
    /// Bootstrap standard errors on a CSV file, or a coverage study on a setting.
    Bootstrap(BootstrapArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Forward,
    Cpsir,
    Ircp,
    Irsemi,
}

impl Method {
    fn kind(self) -> EstimatorKind {
        match self {
            Method::Forward => EstimatorKind::Forward,
            Method::Cpsir => EstimatorKind::CpSir,
            Method::Ircp => EstimatorKind::IrCp,
            Method::Irsemi => EstimatorKind::IrSemi,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct Common {
    /// JSON file whose keys are the long flag names; a manifest works too.
    /// Flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "survsdr-out")]
    out: PathBuf,
    /// Worker threads (default: all available cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

/// Optimizer and smoothing controls.
#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct Tuning {
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Stopping tolerance on the spectral-norm step size.
    #[arg(long, default_value_t = 1e-6)]
    eps0: f64,
    /// Fixed slice width (default: Silverman rule on event times).
    #[arg(long)]
    slice_width: Option<f64>,
    /// Fixed time bandwidth for hazard smoothing (default: Silverman rule).
    #[arg(long)]
    time_bandwidth: Option<f64>,
    /// Compute CP-SIR on the raw rather than whitened covariates.
    #[arg(long)]
    no_whiten: bool,
}

impl Tuning {
    fn fit_config(&self) -> FitConfig {
        let mut cfg = FitConfig::default();
        cfg.optim.max_iter = self.max_iter;
        cfg.optim.eps0 = self.eps0;
        if let Some(w) = self.slice_width {
            cfg.nonparam.slice_width = WidthRule::Fixed(w);
        }
        if let Some(b) = self.time_bandwidth {
            cfg.nonparam.time_bandwidth = WidthRule::Fixed(b);
        }
        cfg.cpsir_whiten = !self.no_whiten;
        cfg
    }
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    /// Name of the observed-time column.
    #[arg(long, default_value = "time")]
    time: String,
    /// Name of the event-indicator column (1 = event, 0 = censored).
    #[arg(long, default_value = "status")]
    status: String,
    /// Covariate columns, comma separated (default: every other column).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Center and scale each covariate before fitting.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Structural dimension.
    #[arg(long)]
    d: usize,
    #[arg(long, value_enum)]
    method: Method,
    /// Rows (1-based, comma separated) that become the identity block in the
    /// normalized basis (default: chosen from the fit).
    #[arg(long, value_delimiter = ',')]
    anchors: Option<Vec<usize>>,
    #[command(flatten)]
    #[serde(flatten)]
    tuning: Tuning,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    setting: u8,
    #[arg(long, default_value_t = 6)]
    p: usize,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Comma separated list of methods.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cpsir")]
    methods: Vec<Method>,
    /// Print the summary with means and sds multiplied by 100.
    /// Affects the terminal only; files keep full precision.
    #[arg(long)]
    display_scale: bool,
    /// Also write every simulated dataset as CSV.
    #[arg(long)]
    write_data: bool,
    #[command(flatten)]
    #[serde(flatten)]
    tuning: Tuning,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct BootstrapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Simulation setting to use instead of `--data`; runs a coverage study.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), conflicts_with = "data")]
    setting: Option<u8>,
    #[arg(long, default_value_t = 6)]
    p: usize,
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Outer replications of a coverage study.
    #[arg(long, default_value_t = 25)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    n_boot: usize,
    #[arg(long, value_enum)]
    method: Method,
    /// Structural dimension (default for a setting: its true dimension).
    #[arg(long)]
    d: Option<usize>,
    /// Identity-block rows, 1-based and comma separated.
    #[arg(long, value_delimiter = ',')]
    anchors: Option<Vec<usize>>,
    /// Confidence level of the normal intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    #[serde(flatten)]
    tuning: Tuning,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<survsdr::SdrError> for CliError {
    fn from(e: survsdr::SdrError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::expand(args).map_err(CliError::Usage)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code == 0 {
                return Ok(());
            }
            return Err(CliError::Usage(String::new()));
        }
    };
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Bootstrap(a) => commands::bootstrap(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
