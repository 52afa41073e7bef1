use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mba_cli::pipelines;
use mba_cli::{exit_class, load_config, resolve_seed};
use mba_core::error::Result;

/// Meta-analysis over posterior distributions: consensus updates for the
/// global parameter, shrinkage updates for study effects, ABC study
/// generation and classical baselines.
#[derive(Parser)]
#[command(name = "mba", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config and MBA_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Consensus posterior over the global parameter.
    UpdateGlobal {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the exact grid oracle instead of the sampler.
        #[arg(long)]
        exact: bool,
    },
    /// Shrinkage-updated posterior for one study.
    UpdateLocal {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        exact: bool,
        /// One-based study index; overrides the config.
        #[arg(long)]
        study: Option<usize>,
    },
    /// Full simulated moving-average study: ABC posteriors, fusion, baselines.
    Ma2Experiment {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Posterior-mass concentration sweep on a discrete support.
    Concentration {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// One rejection-ABC inference run.
    AbcRun {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit a Gaussian or KDE belief to posterior samples.
    FitBelief {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Input sample CSV; overrides the config.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output belief JSON path; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::UpdateGlobal { common, exact } => {
            let mut cfg: mba_cli::UpdateConfig = load_config(&common.config)?;
            if exact {
                cfg.exact = true;
            }
            if let Some(dir) = common.out_dir {
                cfg.out_dir = dir;
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            pipelines::update_global(&cfg, seed)?;
        }
        Cmd::UpdateLocal { common, exact, study } => {
            let mut cfg: mba_cli::UpdateConfig = load_config(&common.config)?;
            if exact {
                cfg.exact = true;
            }
            if let Some(dir) = common.out_dir {
                cfg.out_dir = dir;
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            let study = study.or(cfg.study).ok_or_else(|| {
                mba_core::error::Error::InvalidInput(
                    "no study selected: pass --study or set \"study\" in the config".into(),
                )
            })?;
            pipelines::update_local(&cfg, study, seed)?;
        }
        Cmd::Ma2Experiment { common } => {
            let mut cfg: mba_cli::Ma2Config = load_config(&common.config)?;
            if let Some(dir) = common.out_dir {
                cfg.out_dir = dir;
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            pipelines::ma2_experiment(&cfg, seed)?;
        }
        Cmd::Concentration { common } => {
            let mut cfg: mba_cli::ConcentrationConfig = load_config(&common.config)?;
            if let Some(dir) = common.out_dir {
                cfg.out_dir = dir;
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            pipelines::concentration(&cfg, seed)?;
        }
        Cmd::AbcRun { common } => {
            let mut cfg: mba_cli::AbcRunConfig = load_config(&common.config)?;
            if let Some(dir) = common.out_dir {
                cfg.out_dir = dir;
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            pipelines::abc_run(&cfg, seed)?;
        }
        Cmd::FitBelief { config, input, out } => {
            let mut cfg: mba_cli::FitBeliefConfig = load_config(&config)?;
            if let Some(input) = input {
                cfg.input_csv = input;
            }
            if let Some(out) = out {
                cfg.out = out;
            }
            pipelines::fit_belief(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e) as u8)
        }
    }
}
