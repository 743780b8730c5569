mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

/// Auction-design workbench: synthetic logs, baseline mechanisms, a
/// trainable encoder-decoder mechanism, and incentive audits.
#[derive(Parser, Debug)]
#[command(name = "auctionlab", version, disable_help_subcommand = true)]
struct Cli {
    /// TOML config; falls back to $AUCTIONLAB_CONFIG, then built-in defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/test auction logs
    Gen,
    /// Train the learned mechanism, logging one TSV row per step
    Train {
        /// Continue from a checkpoint (default: <checkpoints>/latest.ckpt)
        #[arg(long)]
        resume: bool,
        /// Explicit checkpoint path to start or resume from
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Tabulate raw CTR / RPM / CVR / IC-R on the test log
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Misreport audit: empirical regret per mechanism
    Audit {
        /// Mechanisms to audit (default: the configured lineup)
        #[arg(long = "mechanism", value_name = "NAME")]
        mechanisms: Vec<String>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Seed-averaged comparison normalized to a reference mechanism
    Compare {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen => commands::cmd_gen(&config),
        Command::Train { resume, checkpoint } => {
            commands::cmd_train(&config, resume, checkpoint.as_deref())
        }
        Command::Eval { checkpoint } => commands::cmd_eval(&config, checkpoint.as_deref()),
        Command::Audit {
            mechanisms,
            checkpoint,
        } => commands::cmd_audit(&config, &mechanisms, checkpoint.as_deref()),
        Command::Compare { checkpoint } => commands::cmd_compare(&config, checkpoint.as_deref()),
    }
}
