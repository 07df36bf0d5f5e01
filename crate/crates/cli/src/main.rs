use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tpgf_cli::{commands, CliError, ExperimentConfig};

/// Seq2Seq forecasting experiments with teacher forcing, scheduled sampling
/// and temporal progressive growing sampling.
#[derive(Parser)]
#[command(name = "tpgf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the data directory.
    Generate(Common),
    /// Train the configured strategy; writes checkpoints, curves.csv and evaluate.csv.
    Train(Common),
    /// Closed-loop test metrics of a checkpoint; writes evaluate.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: the run's model.ckpt or m2.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Side-by-side table of several evaluated runs.
    Compare {
        /// Config of each run to compare (repeat the flag).
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Overrides every run's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the table (default: the first run's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse_with(&text, &path.display().to_string(), seed, out)
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("TPGF_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "TPGF_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    tpgf_core::exec::init_threads(threads_from_env()?);
    match cli.command {
        Command::Generate(c) => commands::generate(&load(&c.config, c.seed, c.out.as_deref())?),
        Command::Train(c) => commands::train(&load(&c.config, c.seed, c.out.as_deref())?),
        Command::Evaluate { common: c, checkpoint } => {
            commands::evaluate(&load(&c.config, c.seed, c.out.as_deref())?, checkpoint.as_deref())
        }
        Command::Compare { configs, seed, out } => {
            let cfgs = configs
                .iter()
                .map(|p| load(p, seed, None))
                .collect::<Result<Vec<_>, _>>()?;
            let out = out.unwrap_or_else(|| cfgs[0].out_dir.clone());
            commands::compare(&cfgs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tpgf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
