//! `ideaforge`: run live campaigns, simulate them on a virtual clock, replay
//! and export their logs.

mod live;
mod offline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ideaforge_core::campaign::CampaignError;
use ideaforge_core::config::ConfigError;
use ideaforge_core::sim::SimError;
use ideaforge_core::store::StoreError;

#[derive(Parser)]
#[command(name = "ideaforge", version, about = "Evolve game concepts from audience votes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign on its configured channel, resuming from its log if one exists.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a campaign against simulated voters on a virtual clock.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        voters: PathBuf,
        /// Number of activations to run.
        #[arg(long)]
        iterations: u64,
        #[arg(long)]
        seed: u64,
        /// Directory for the event log, CSV exports and summary.
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Rebuild the state from a log and print its digest and summary.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Write one analytics series of a log as CSV.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        what: Export,
        /// Output file. Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Timeline bucket width.
        #[arg(long, default_value_t = 60)]
        bucket_minutes: i64,
        /// Newline-separated stopwords for the word export.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Population the word export covers.
        #[arg(long, value_enum, default_value_t = Population::Final)]
        population: Population,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Export {
    Timeline,
    Lengths,
    Words,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Population {
    Initial,
    Final,
}

/// A failed command, classified by exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
    Corrupt(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Corrupt(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) | Failure::Corrupt(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::CorruptLog { .. } => Failure::Corrupt(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::InvalidConfig(_) | CampaignError::Template(_) => Failure::Config(e.to_string()),
            CampaignError::Store(inner) => inner.into(),
            CampaignError::NotACampaign => Failure::Corrupt(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidVoters(_) | SimError::Read { .. } => Failure::Config(e.to_string()),
            SimError::Campaign(inner) => inner.into(),
            SimError::Stalled { .. } => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => live::run(&config),
        Command::Simulate { config, voters, iterations, seed, out } => offline::simulate(&config, &voters, iterations, seed, &out),
        Command::Replay { log } => offline::replay(&log),
        Command::Export { log, what, out, bucket_minutes, stopwords, population } => {
            offline::export(&log, what, out.as_deref(), bucket_minutes, stopwords.as_deref(), population)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn flags_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn corrupt_logs_map_to_their_own_exit_code() {
        let corrupt: Failure = StoreError::CorruptLog { seq: 3, reason: "bad crc".into() }.into();
        assert_eq!(corrupt.exit_code(), 4);
        let nested: Failure = SimError::Campaign(CampaignError::Store(StoreError::StorageFull)).into();
        assert_eq!(nested.exit_code(), 3);
        assert_eq!(Failure::from(SimError::InvalidVoters("x".into())).exit_code(), 2);
    }
}
