use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcrnn::train::Metric;
use gcrnn_cli::{
    cmd_count_params, cmd_eval, cmd_experiment, cmd_generate, cmd_train, format_param_table, CliError,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "gcrnn", version, about = "Graph convolutional recurrent networks over graph processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one dataset directory per round.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the configured architectures on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a saved model on the test split of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "mae")]
        metric: String,
        /// Results CSV the value is appended to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate, train and evaluate every round and architecture.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print itemized parameter counts.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            for dir in cmd_generate(&load(&config, seed)?, &out)? {
                println!("{}", dir.display());
            }
        }
        Command::Train { config, data, out, seed } => {
            let summaries = cmd_train(&load(&config, seed)?, &data, &out, |arch, r| {
                let val = r.val_loss.map_or(String::from("-"), |v| format!("{v:.6}"));
                eprintln!("{arch} epoch {} train {:.6} val {val}", r.epoch, r.train_loss);
            })?;
            for s in summaries {
                println!(
                    "{} parameters={} test_{:?}={:.6}",
                    s.architecture, s.parameters, s.metric, s.test_metric
                );
            }
        }
        Command::Eval { model, data, metric, out } => {
            let metric: Metric = metric.parse().map_err(|e: gcrnn::Error| CliError::Config(e.to_string()))?;
            println!("{}", cmd_eval(&model, &data, metric, out.as_deref())?);
        }
        Command::Experiment { config, out, seed } => {
            let report = cmd_experiment(&load(&config, seed)?, &out, |r| {
                eprintln!("round {} {} {:.6}", r.round, r.architecture, r.value);
            })?;
            for a in &report.aggregates {
                println!("{} parameters={} mean={:.6} std={:.6}", a.architecture, a.parameters, a.mean, a.std);
            }
        }
        Command::CountParams { config } => {
            print!("{}", format_param_table(&cmd_count_params(&load(&config, None)?)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
