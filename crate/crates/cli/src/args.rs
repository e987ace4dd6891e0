use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "chronomem", version, about = "Conversational memory engine")]
pub struct Cli {
    /// Engine configuration file (JSON). Defaults apply when omitted.
    #[arg(long, global = true, env = "CHRONOMEM_CONFIG")]
    pub config: Option<PathBuf>,

    /// Talk to a running server instead of an in-process engine.
    #[arg(long, global = true, env = "CHRONOMEM_SERVER")]
    pub server: Option<String>,

    /// Bearer token sent to the server.
    #[arg(long, global = true, env = "CHRONOMEM_TOKEN", hide_env_values = true)]
    pub token: Option<String>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer each line read from stdin. `/at <ms>` moves the clock.
    Chat {
        #[arg(long, default_value = "default")]
        session: String,
        /// Fixed timestamp (ms since the epoch) for every turn.
        #[arg(long, value_parser = clap::value_parser!(i64).range(1..))]
        at: Option<i64>,
    },
    /// Chunk, embed and index documents.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(i64).range(1..))]
        at: Option<i64>,
    },
    /// Run a scenario suite and print the metrics table.
    Eval {
        /// Scenario file; the bundled suite when omitted.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Row label for the comparison table.
        #[arg(long)]
        label: Option<String>,
    },
    /// Rebuild state from an event log.
    Replay {
        log: PathBuf,
        /// Check the footer digest and state hash.
        #[arg(long)]
        verify: bool,
    },
    /// Run the HTTP API.
    Serve {
        /// Overrides `listen_addr` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
}
