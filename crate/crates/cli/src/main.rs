mod args;
mod commands;
mod error;
mod target;

use std::io::{self, IsTerminal};
use std::process::ExitCode;

use chronomem::{Engine, EngineConfig};
use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Output;
use crate::error::CliError;
use crate::target::{Client, Target};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("CHRONOMEM_LOG"))
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    let target = |config: EngineConfig| -> Result<Target, CliError> {
        Ok(match &cli.server {
            Some(url) => Target::Remote(Client::new(url, cli.token.clone())),
            None => Target::Local(Box::new(Engine::from_config(config)?)),
        })
    };
    let local_only = |name: &str| match &cli.server {
        Some(_) => Err(CliError::Usage(format!("{name} runs in-process; drop --server"))),
        None => Ok(()),
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    let mut out = Output { format: cli.format, out: &mut lock };

    match &cli.command {
        Command::Chat { session, at } => {
            let stdin = io::stdin();
            let interactive = stdin.is_terminal();
            commands::chat(&target(config)?, session, *at, &mut stdin.lock(), interactive, &mut out, &mut io::stderr())
        }
        Command::Ingest { paths, at } => commands::ingest(&target(config)?, paths, *at, &mut out),
        Command::Eval { scenarios, label } => {
            local_only("eval")?;
            commands::eval(&config, scenarios.as_deref(), label.as_deref(), &mut out)
        }
        Command::Replay { log, verify } => {
            local_only("replay")?;
            commands::replay(&config, log, *verify, &mut out)
        }
        Command::Serve { listen } => {
            local_only("serve")?;
            commands::serve(config, listen.clone())
        }
    }
}
