//! `fusesdm`: simulate surveys, fit the integrated models, run the
//! simulation study and map fitted intensities.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 non-convergence, 1 anything else (including interrupted runs).

mod commands;
mod config;
mod error;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fusesdm::likelihoods::Scenario;

use crate::config::{load, resolve, ExperimentConfig, FitConfig, PredictConfig, SimulateConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "fusesdm", version, about = "Integrated species distribution models for fused survey data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one survey and write its design, data and covariates.
    Simulate(SimulateArgs),
    /// Fit models to survey data.
    Fit(FitArgs),
    /// Run the replicated simulation study.
    Experiment(ExperimentArgs),
    /// Map the fitted intensity over the covariate grid.
    PredictMap(PredictArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index whose random stream is used.
    #[arg(long)]
    replicate: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Model to fit (name or number 1-5); repeatable.
    #[arg(long = "scenario")]
    scenarios: Vec<Scenario>,
    /// Area-quadrature node spacing in map units.
    #[arg(long)]
    quad_spacing: Option<f64>,
    /// Seed for jittered starts.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "scenario")]
    scenarios: Vec<Scenario>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quad_spacing: Option<f64>,
    /// Stop after this many replicates, as if interrupted.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// `fit.json` from the fit command (overrides the config).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Covariate raster; repeatable (overrides the config).
    #[arg(long = "covariate")]
    covariates: Vec<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
}

fn resolve_all<'a>(paths: impl IntoIterator<Item = &'a mut PathBuf>, base: &Path) -> Result<(), CliError> {
    paths.into_iter().try_for_each(|p| resolve(p, base))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let (mut cfg, base) = load::<SimulateConfig>(args.common.config.as_deref())?.unwrap_or_default();
            resolve_all(cfg.design.iter_mut(), &base)?;
            resolve_all(cfg.covariates.iter_mut().flatten(), &base)?;
            if let Some(seed) = args.seed {
                cfg.study.seed = seed;
            }
            if let Some(r) = args.replicate {
                cfg.replicate = r;
            }
            commands::simulate(cfg, &args.common.out)
        }
        Command::Fit(args) => {
            let Some((mut cfg, base)) = load::<FitConfig>(args.common.config.as_deref())? else {
                return Err(CliError::Config("fit needs --config".into()));
            };
            resolve(&mut cfg.design, &base)?;
            resolve(&mut cfg.observations, &base)?;
            resolve_all(cfg.covariates.iter_mut(), &base)?;
            if !args.scenarios.is_empty() {
                cfg.scenarios = args.scenarios;
            }
            if let Some(h) = args.quad_spacing {
                cfg.quadrature.spacing = Some(h);
            }
            if let Some(seed) = args.seed {
                cfg.fit.seed = seed;
            }
            commands::fit(cfg, &args.common.out)
        }
        Command::Experiment(args) => {
            let (mut cfg, _) = load::<ExperimentConfig>(args.common.config.as_deref())?.unwrap_or_default();
            let study = &mut cfg.study;
            if let Some(seed) = args.seed {
                study.seed = seed;
            }
            if !args.scenarios.is_empty() {
                study.scenarios = args.scenarios;
            }
            if let Some(n) = args.replicates {
                study.replicates = n;
            }
            if let Some(h) = args.quad_spacing {
                study.quadrature.spacing = Some(h);
            }
            if let Some(w) = args.workers {
                cfg.workers = w;
            }
            let cancel = Arc::new(AtomicBool::new(false));
            let flag = Arc::clone(&cancel);
            // Ctrl-C stops the run at the next batch boundary.
            let _ = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed));
            commands::experiment(cfg, &args.common.out, &cancel, args.stop_after)
        }
        Command::PredictMap(args) => {
            let loaded = load::<PredictConfig>(args.common.config.as_deref())?;
            let (mut cfg, base) = match loaded {
                Some(pair) => pair,
                None => {
                    let Some(fit) = args.fit.clone() else {
                        return Err(CliError::Config("predict-map needs --config or --fit".into()));
                    };
                    (PredictConfig { fit, covariates: Vec::new(), scenario: None, run: None }, PathBuf::new())
                }
            };
            resolve(&mut cfg.fit, &base)?;
            resolve_all(cfg.covariates.iter_mut(), &base)?;
            if let Some(mut fit) = args.fit {
                resolve(&mut fit, Path::new(""))?;
                cfg.fit = fit;
            }
            if !args.covariates.is_empty() {
                cfg.covariates = args.covariates;
                resolve_all(cfg.covariates.iter_mut(), Path::new(""))?;
            }
            if cfg.covariates.is_empty() {
                return Err(CliError::Config("no covariate rasters given".into()));
            }
            if args.scenario.is_some() {
                cfg.scenario = args.scenario;
            }
            commands::predict_map(cfg, &args.common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fusesdm: {e}");
            e.exit_code()
        }
    }
}
