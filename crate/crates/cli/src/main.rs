use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dqlm::mcmc::McmcConfig;
use dqlm_cli::config::{Engine, Overrides, RunConfig};
use dqlm_cli::error::CliResult;
use dqlm_cli::fit::{run_fit, run_forecast, STATE_FILE};
use dqlm_cli::replicate::{run_replicate, ReplicateOptions, ReplicatePreset};
use dqlm_cli::simulate::{run_simulate, SimPreset};

#[derive(Parser)]
#[command(name = "dqlm", version, about = "Dynamic quantile linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic series and its ground truth.
    Simulate {
        preset: SimPreset,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "dqlm-sim")]
        out: PathBuf,
    },
    /// Fit a quantile grid to a series.
    Fit(FitArgs),
    /// Forecast from a saved fit.
    Forecast {
        /// Output directory of a previous `fit`, or its state file.
        fit: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Also report sums over consecutive windows of this many steps.
        #[arg(long)]
        window: Option<usize>,
        /// Defaults to the fit directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun one of the built-in studies.
    Replicate {
        preset: ReplicatePreset,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        replications: usize,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long, default_value = "dqlm-replicate")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Input CSV (overrides `input.path`).
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit on log y and report exponentiated quantiles.
    #[arg(long)]
    log: bool,
    /// Forecast this many steps after fitting.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    match cli.command {
        Command::Simulate { preset, length, seed, out } => {
            run_simulate(preset, length, seed, &out)?;
            Ok(out)
        }
        Command::Fit(a) => {
            let base = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let o = Overrides {
                input: a.input,
                engine: a.engine,
                quantiles: a.quantiles,
                seed: a.seed,
                output_dir: a.out,
                log: a.log,
                horizon: a.horizon,
                window: a.window,
                sweeps: a.sweeps,
                burn_in: a.burn_in,
                thin: a.thin,
            };
            let cfg = base.apply(&o);
            run_fit(&cfg)?;
            Ok(cfg.output_dir)
        }
        Command::Forecast { fit, horizon, window, out } => {
            let (state, dir) = if fit.is_dir() { (fit.join(STATE_FILE), fit.clone()) } else { (fit.clone(), fit.parent().map(PathBuf::from).unwrap_or_default()) };
            let out = out.unwrap_or(dir);
            run_forecast(&state, horizon, window, &out)?;
            Ok(out)
        }
        Command::Replicate { preset, seed, replications, sweeps, burn_in, thin, out } => {
            let d = match preset {
                ReplicatePreset::TrendSeasonal => McmcConfig::default(),
                ReplicatePreset::GammaCoverage => McmcConfig { sweeps: 2000, burn_in: 500, thin: 2, seed: 1 },
            };
            let mcmc = McmcConfig { sweeps: sweeps.unwrap_or(d.sweeps), burn_in: burn_in.unwrap_or(d.burn_in), thin: thin.unwrap_or(d.thin), seed };
            run_replicate(preset, &ReplicateOptions { seed, replications, mcmc }, &out)?;
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dqlm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
