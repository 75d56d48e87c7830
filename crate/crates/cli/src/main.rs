//! `upda`: dataset generation, training, evaluation and reporting.
//!
//! Exit status: 0 success, 1 I/O or other runtime failure, 2 configuration
//! or usage error, 3 training diverged (non-finite loss).

mod commands;
mod config;
mod plot;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigError;

#[derive(Parser)]
#[command(
    name = "upda",
    version,
    about = "Unsupervised progressive domain adaptation for point-cloud quality assessment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Dataset root holding `source/` and `target/`.
    #[arg(long, env = "UPDA_DATA_DIR", default_value = "data")]
    pub data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the source and target datasets of an experiment.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Dataset seed (overrides `data_seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (defaults to the dataset root).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train one method and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// noadapt | diradapt | upda
        #[arg(long)]
        method: String,
        /// Training seed (defaults to the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Adapt on the training groups of this target fold only.
        #[arg(long)]
        fold: Option<usize>,
        /// Target dataset directory (defaults to `<data>/target`).
        #[arg(long)]
        target: Option<PathBuf>,
        /// Run directory; must be new unless `--resume` is given.
        #[arg(long)]
        out: PathBuf,
        /// Reuse a completed stage-1 checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate: the full protocol from a config, or a single run directory.
    Eval {
        #[arg(long, conflicts_with = "run", required_unless_present = "run")]
        config: Option<PathBuf>,
        /// Evaluate this run directory on its target test split.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Restrict the protocol to one method.
        #[arg(long, requires = "config")]
        method: Option<String>,
        /// Restrict the protocol to one seed.
        #[arg(long, requires = "config")]
        seed: Option<u64>,
        /// Output directory (protocol) or JSON file (single run).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the protocol (0: all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Aggregate evaluation outputs into report.csv / report.json.
    Report {
        /// Evaluation output directories.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one scatter plot per run.
        #[arg(long)]
        plots: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<upda_core::Error>() {
            return match e {
                upda_core::Error::Config(_) => 2,
                upda_core::Error::Diverged { .. } => 3,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            config,
            seed,
            out,
            data,
        } => commands::gen_data(&config, seed, out.unwrap_or(data.data)),
        Command::Train {
            config,
            method,
            seed,
            fold,
            target,
            out,
            resume,
            data,
        } => commands::train(&commands::TrainArgs {
            config,
            method,
            seed,
            fold,
            target,
            out,
            resume,
            data: data.data,
        }),
        Command::Eval {
            config,
            run,
            method,
            seed,
            out,
            threads,
            data,
        } => match (config, run) {
            (Some(config), _) => commands::eval_protocol(&config, method.as_deref(), seed, out, threads, &data.data),
            (None, Some(run)) => commands::eval_run(&run, out, &data.data),
            (None, None) => unreachable!("clap requires --config or --run"),
        },
        Command::Report { input, out, plots } => commands::report(&input, &out, plots),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
