mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{EvalArgs, ProfileArgs};
use config::Experiment;

#[derive(Parser)]
#[command(
    name = "mertopt",
    about = "Learn and evaluate dynamic stock-allocation policies on simulated markets",
    version
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate model parameters from the CSV files named in the config.
    Calibrate,
    /// Train one policy per configured risk-aversion value.
    Train,
    /// Monte Carlo evaluation of a policy; writes a report CSV.
    Eval {
        /// One of: ann, analytic, myopic, constant:<w>.
        #[arg(long)]
        policy: String,
        /// Checkpoint file (required for --policy ann).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Replications; defaults to run.eval_reps from the config.
        #[arg(long)]
        reps: Option<usize>,
        /// Also dump this many full simulated paths.
        #[arg(long)]
        dump_paths: Option<usize>,
        /// Also export wealth trajectories of this policy and the
        /// closed-form baseline on this many common-noise paths.
        #[arg(long)]
        compare_wealth: Option<usize>,
    },
    /// Tabulate a policy's weight over (t, y) grids.
    Profile {
        /// Closed-form policy spec (analytic, myopic, constant:<w>).
        #[arg(long)]
        policy: Option<String>,
        /// Checkpoint file for a trained policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Time grid: `lo:hi:count` or comma-separated values.
        #[arg(long)]
        t_grid: String,
        /// Squared-volatility grid: same syntax.
        #[arg(long)]
        y_grid: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();

    let config_path = cli
        .config
        .as_ref()
        .context("--config is required")?
        .clone();
    let mut exp = Experiment::load(&config_path)?;
    if let Some(seed) = cli.seed {
        exp.seed = seed;
    }
    if let Some(out) = cli.out {
        exp.out = out;
    }

    match &cli.command {
        Command::Calibrate => commands::cmd_calibrate(&exp, cli.verbose),
        Command::Train => commands::cmd_train(&exp, cli.verbose),
        Command::Eval {
            policy,
            checkpoint,
            reps,
            dump_paths,
            compare_wealth,
        } => commands::cmd_eval(
            &exp,
            &EvalArgs {
                policy: policy.clone(),
                checkpoint: checkpoint.clone(),
                reps: *reps,
                dump_paths: *dump_paths,
                compare_wealth: *compare_wealth,
            },
            cli.verbose,
        ),
        Command::Profile {
            policy,
            checkpoint,
            t_grid,
            y_grid,
        } => commands::cmd_profile(
            &exp,
            &ProfileArgs {
                policy: policy.clone(),
                checkpoint: checkpoint.clone(),
                t_grid: t_grid.clone(),
                y_grid: y_grid.clone(),
            },
            cli.verbose,
        ),
    }
}
