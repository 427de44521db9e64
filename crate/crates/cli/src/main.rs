use std::path::PathBuf;
use std::process::ExitCode;

use cdadp::trainer::Algorithm;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod plot;

use commands::ConfigArgs;

/// Constrained deep ADP: training, evaluation, algorithm comparison and
/// tabular verification.
#[derive(Debug, Parser)]
#[command(name = "cdadp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one policy and write metrics, checkpoints, trajectories and plots.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `$CDADP_OUT_ROOT/<algo>-seed<n>-<hash>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop evaluation of a policy checkpoint.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Control steps; defaults to `eval.final_steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Seed for the initial state (`eval.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the trajectory CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several algorithms over several seeds and summarize.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long = "algo", value_delimiter = ',', required = true)]
        algos: Vec<Algorithm>,
        #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// PTRADP penalty weights to sweep.
        #[arg(long = "eta", value_delimiter = ',')]
        etas: Vec<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check policy-iteration properties on finite MDPs; exit 1 on any failure.
    VerifyTabular {
        /// JSON MDP to verify.
        #[arg(long, conflicts_with = "random")]
        mdp: Option<PathBuf>,
        /// Number of random MDPs to verify.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for report.json and failing witnesses.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train {
            config,
            algo,
            iters,
            seed,
            out,
        } => commands::cmd_train(&config, algo, iters, seed, out).map(|_| true),
        Command::Eval {
            config,
            checkpoint,
            steps,
            seed,
            out,
        } => commands::cmd_eval(&config, &checkpoint, steps, seed, out).map(|_| true),
        Command::Compare {
            config,
            algos,
            seeds,
            etas,
            iters,
            out,
        } => commands::cmd_compare(&config, &algos, &etas, &seeds, iters, out),
        Command::VerifyTabular { mdp, random, seed, out } => {
            commands::cmd_verify_tabular(mdp.as_deref(), random, seed, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
