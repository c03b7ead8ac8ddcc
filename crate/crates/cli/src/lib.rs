//! Library face of the `cwm` binary: argument definitions and command
//! dispatch, kept callable for integration tests.

pub mod commands {
    pub mod eval;
    pub mod gen;
    pub mod plot;
    pub mod rank;
    pub mod train;
}
pub mod config;
pub mod formats;
pub mod logging;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;
use cwm_core::{CwmError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "cwm",
    about = "Counterfactual ball-world laboratory: generate confounded episodes, train latent world models, evaluate dream rollouts, and rank puzzle actions"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for episode-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Primary output path override (directory or file, per command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Validate the configuration and print the plan without writing.
    #[arg(long, global = true)]
    pub dry_run: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate train/test episode datasets.
    Gen,
    /// Train a world model on the training dataset.
    Train {
        /// wm | cwm | crm-cwm.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate dream rollouts on the test dataset.
    Eval {
        /// Number of evaluated prediction steps.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Rank puzzle actions with the trained model against MEM and RAND.
    Rank,
    /// Render an eval report, trajectory dump, or curves file to SVG/CSV.
    Plot {
        /// Input JSON; falls back to io.plot_input.
        input: Option<PathBuf>,
    },
}

/// Exit code families: 2 config/schema, 3 I/O, 4 numerics.
pub fn exit_code(err: &CwmError) -> i32 {
    match err {
        CwmError::Storage(_) | CwmError::CorruptData(_) => 3,
        CwmError::Numerics(_) => 4,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Run one parsed command end to end.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Gen => {
            commands::gen::run_gen(&cfg, out, cli.jobs, cli.dry_run)?;
        }
        Command::Train { mode, epochs } => {
            if cli.dry_run {
                cfg.validate()?;
                println!("dry run: config valid");
                return Ok(());
            }
            commands::train::run_train(
                &cfg,
                &commands::train::TrainOverrides {
                    mode: mode.as_deref(),
                    epochs: *epochs,
                    seed: cli.seed,
                    out,
                },
            )?;
        }
        Command::Eval { horizon } => {
            if cli.dry_run {
                cfg.validate()?;
                println!("dry run: config valid");
                return Ok(());
            }
            commands::eval::run_eval(
                &cfg,
                &commands::eval::EvalOverrides {
                    horizon: *horizon,
                    seed: cli.seed,
                    jobs: cli.jobs,
                    out,
                },
            )?;
        }
        Command::Rank => {
            if cli.dry_run {
                cfg.validate()?;
                println!("dry run: config valid");
                return Ok(());
            }
            commands::rank::run_rank(
                &cfg,
                &commands::rank::RankOverrides {
                    seed: cli.seed,
                    jobs: cli.jobs,
                    out,
                },
            )?;
        }
        Command::Plot { input } => {
            commands::plot::run_plot(&cfg, input.as_deref(), out)?;
        }
    }
    Ok(())
}
