//! Command-line front end: run simulations, check history files, fuzz
//! mutants and report round statistics.

pub mod commands;
pub mod config;
pub mod format;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use scabd::protocol::Mutation;

pub use commands::{exit, CheckMode, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "scabd",
    version,
    about = "Simulate and check quorum-replicated shared registers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MutantArg {
    None,
    SmallQuorum,
    NoWriteback,
}

impl From<MutantArg> for Mutation {
    fn from(m: MutantArg) -> Self {
        match m {
            MutantArg::None => Mutation::None,
            MutantArg::SmallQuorum => Mutation::SmallQuorum,
            MutantArg::NoWriteback => Mutation::NoWriteback,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one configuration and write its history and message log.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// History output; the message log goes next to it as <stem>.msgs.jsonl.
        #[arg(long, default_value = "history.jsonl")]
        out: PathBuf,
    },
    /// Check a history file for sequential consistency.
    Check {
        history: PathBuf,
        #[arg(long, value_enum, default_value_t = CheckMode::Compositional)]
        mode: CheckMode,
    },
    /// Run seeded simulations and check each one.
    Fuzz {
        #[arg(long)]
        runs: u64,
        #[arg(long, value_enum, default_value_t = MutantArg::None)]
        mutant: MutantArg,
        #[arg(long, default_value_t = 0)]
        seed0: u64,
    },
    /// Rounds per operation, from a history and its message log.
    Stats { history: PathBuf },
}

/// Runs a parsed command line and returns the exit status.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out: path,
        } => commands::cmd_run(&config, seed, &path, out),
        Command::Check { history, mode } => commands::cmd_check(&history, mode, out),
        Command::Fuzz {
            runs,
            mutant,
            seed0,
        } => commands::cmd_fuzz(runs, mutant.into(), seed0, out),
        Command::Stats { history } => commands::cmd_stats(&history, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
