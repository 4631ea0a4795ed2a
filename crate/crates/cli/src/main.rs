//! `cnn-rsl`: run, tune and compare hyperspectral pixel classifiers.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cnn_rsl::LearningSetting;

use crate::config::{ExperimentConfig, Overrides};
use crate::failure::{Failure, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "cnn-rsl",
    version,
    about = "Spectral-spatial CNN for hyperspectral pixels"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Subset of RSL, or CNN for the plain network.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// transductive or non-overlapping.
    #[arg(long, global = true)]
    setting: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample, augment, train and evaluate over repeated runs.
    Pipeline,
    /// Random search with cross-validation over the configured space.
    Tune,
    /// Sign test between two prediction files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Significance threshold (default: the configuration's, else 0.05).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Smooth a whole cube and report the filter time.
    Smooth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sigma: f64,
    },
    /// Draw a labeled training set and write it as CSV.
    Sample,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::new(Stage::Config, "--config is required for this command"))?;
    let mut config = ExperimentConfig::load(path)?;
    config.apply(&overrides(cli)?);
    Ok(config)
}

fn overrides(cli: &Cli) -> Result<Overrides, Failure> {
    let setting = cli
        .setting
        .as_deref()
        .map(|s| s.parse::<LearningSetting>())
        .transpose()
        .map_err(|e| Failure::new(Stage::Config, e.to_string()))?;
    Ok(Overrides {
        seed: cli.seed,
        output: cli.output.clone(),
        variant: cli.variant.clone(),
        setting,
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Pipeline => commands::pipeline(&load_config(cli)?).map(drop),
        Command::Tune => commands::tune(&load_config(cli)?).map(drop),
        Command::Sample => commands::sample(&load_config(cli)?).map(drop),
        Command::Compare { a, b, threshold } => {
            let config = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
            let threshold = threshold
                .or(config.as_ref().map(|c| c.threshold))
                .unwrap_or(cnn_rsl::eval::DEFAULT_SIGNIFICANCE);
            let output = cli
                .output
                .clone()
                .or(config.map(|c| c.output_dir))
                .unwrap_or_else(|| PathBuf::from("."));
            commands::compare(a, b, threshold, &output).map(drop)
        }
        Command::Smooth { input, sigma } => {
            commands::smooth(input, *sigma, cli.output.as_deref()).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error in stage 'config': --threads must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error in stage 'config': cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };

    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
