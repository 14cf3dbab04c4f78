//! Command-line pipeline: ingest and preprocess the three coverage
//! sources, fit a model per WHO region, and post-process draws into
//! estimate, prediction, regional-aggregate and WAIC tables.
//!
//! Exit codes: 0 success, 1 user error (bad arguments or inputs),
//! 2 internal error.

mod commands;
mod fitmeta;
mod runcfg;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "vaxcov",
    about = "Multi-source national immunization coverage estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the three source CSVs, apply bias corrections and write an
    /// analysis-ready CSV plus a processing report.
    Preprocess(PreprocessArgs),
    /// Fit the BDSL or IDML model and write draws, diagnostics, estimates
    /// and metadata per region.
    Fit(FitArgs),
    /// Extend fitted dynamics forward and write prediction tables.
    Predict(PredictArgs),
    /// Population-weighted regional aggregation of fitted estimates.
    Aggregate(AggregateArgs),
    /// Model comparison via WAIC over the observed data points.
    Waic(WaicArgs),
    /// Generate synthetic data and run the model-comparison experiment.
    Simulate(SimulateArgs),
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Administrative coverage CSV.
    #[arg(long)]
    admin: std::path::PathBuf,
    /// Official coverage CSV.
    #[arg(long)]
    official: std::path::PathBuf,
    /// Survey coverage CSV.
    #[arg(long)]
    survey: std::path::PathBuf,
    /// Vaccines to keep (comma separated).
    #[arg(long, default_value = "DTP1,DTP3,MCV1,MCV2,PCV3")]
    vaccines: String,
    /// Year window as START:END.
    #[arg(long, default_value = "2000:2019")]
    years: String,
    /// Minimum survey sample size for acceptance.
    #[arg(long, default_value_t = 300)]
    min_sample_size: u64,
    /// Skip the recall-bias adjustment.
    #[arg(long)]
    no_recall: bool,
    /// Skip the DTP ratio construction.
    #[arg(long)]
    no_ratio: bool,
    /// Keep exact-zero coverage records.
    #[arg(long)]
    keep_zero: bool,
    /// Analysis-ready output CSV.
    #[arg(long)]
    out: std::path::PathBuf,
    /// Processing report path.
    #[arg(long)]
    report: std::path::PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Analysis-ready CSV from `preprocess`.
    #[arg(long)]
    data: std::path::PathBuf,
    /// Model: bdsl or idml.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit all regions pooled into one model instead of per region.
    #[arg(long)]
    pooled: bool,
    /// Restrict to one region code.
    #[arg(long)]
    region: Option<String>,
    /// Prior override key=value (repeatable), e.g. prior.sigma3.upper=0.4.
    #[arg(long = "prior")]
    priors: Vec<String>,
    /// Prior configuration file (key=value lines).
    #[arg(long)]
    prior_file: Option<std::path::PathBuf>,
    /// Year-of-introduction CSV (country,vaccine,intro_year); estimate
    /// rows before a vaccine's introduction are removed.
    #[arg(long)]
    yovi: Option<std::path::PathBuf>,
    /// Run configuration file; flags take precedence over file values.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Output directory for fit artifacts.
    #[arg(long)]
    out_dir: std::path::PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Directory containing fit artifacts.
    #[arg(long)]
    fit_dir: std::path::PathBuf,
    /// Restrict to one region code.
    #[arg(long)]
    region: Option<String>,
    /// Forecast horizon in years.
    #[arg(long, default_value_t = 2)]
    steps: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Output directory (defaults to the fit directory).
    #[arg(long)]
    out_dir: Option<std::path::PathBuf>,
}

#[derive(Args)]
pub struct AggregateArgs {
    #[arg(long)]
    fit_dir: std::path::PathBuf,
    /// Denominator CSV (country,vaccine,year,target_population).
    #[arg(long)]
    denominators: std::path::PathBuf,
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    out_dir: Option<std::path::PathBuf>,
}

#[derive(Args)]
pub struct WaicArgs {
    #[arg(long)]
    fit_dir: std::path::PathBuf,
    /// Analysis-ready CSV the fit was produced from.
    #[arg(long)]
    data: std::path::PathBuf,
    #[arg(long)]
    region: Option<String>,
    /// Output CSV (region, gof, penalty, waic).
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario number (1, 2 or 3).
    #[arg(long, default_value_t = 1)]
    scenario: u8,
    /// Desk-scale dimensions and chain settings (C=8, V=3, T=12, 4x1000).
    #[arg(long)]
    desk: bool,
    /// Full-scale dimensions (C=20, V=5, T=20).
    #[arg(long)]
    full_scale: bool,
    /// Explicit dimensions C,V,T (overrides --desk/--full-scale).
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Forecast horizons to evaluate (0 = in-sample only).
    #[arg(long, default_value_t = 2)]
    horizons: usize,
    /// Forecast protocol: rolling or fit-once.
    #[arg(long, default_value = "rolling")]
    mode: String,
    #[arg(long)]
    out_dir: std::path::PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; argument problems are
            // user errors.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };

    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Fit(args) => commands::fit(args),
        Command::Predict(args) => commands::predict(args),
        Command::Aggregate(args) => commands::aggregate(args),
        Command::Waic(args) => commands::waic(args),
        Command::Simulate(args) => commands::simulate(args),
    });

    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
        Err(_) => {
            eprintln!("internal error: unexpected panic");
            ExitCode::from(2)
        }
    }
}
