use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use eadmnc::config::{apply_overrides, validate_config};
use eadmnc::parallel::{default_workers, with_workers};
use eadmnc::pipeline::{run_pipeline, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Train,
    Score,
    Explain,
    Tree,
    Synth,
    Eval,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::Score => Command::Score,
            Cmd::Explain => Command::Explain,
            Cmd::Tree => Command::Tree,
            Cmd::Synth => Command::Synth,
            Cmd::Eval => Command::Eval,
        }
    }
}

/// Explainable anomaly detection on mixed numerical and categorical data.
#[derive(Debug, Parser)]
#[command(name = "eadmnc", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,

    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for every data-parallel stage.
    #[arg(long, env = "EADMNC_WORKERS")]
    workers: Option<usize>,

    /// Pruning penalty per split condition.
    #[arg(long)]
    lambda: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match validate_config(&cli.config).and_then(|c| apply_overrides(c, cli.seed, cli.workers, cli.lambda)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let command = Command::from(cli.command);
    let workers = cfg.workers.unwrap_or_else(default_workers);
    match with_workers(workers, || run_pipeline(&cfg, command)) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
