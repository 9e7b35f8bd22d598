use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resgcnn::data::DatasetId;
use resgcnn_cli::commands::{cmd_evaluate, cmd_prepare, cmd_synth, cmd_train, cmd_transfer};
use resgcnn_cli::config::config_help;
use resgcnn_cli::selfcheck::{run_selfcheck, SelfCheckOptions};
use resgcnn_cli::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "resgcnn",
    version,
    about = "Residual Chebyshev graph networks for wearable-sensor activity recognition",
    after_long_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; see `--help` for every key
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding every seed in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Parallel workers for the transfer grid
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// pamap2, mhealth, tnda or synthetic
    #[arg(long, global = true)]
    dataset: Option<DatasetId>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, resample and segment a dataset into a prepared archive
    Prepare,
    /// Train with k-fold cross-validation or a single split
    Train,
    /// Transfer residual blocks between datasets, or run the few-shot grid
    Transfer,
    /// Evaluate a stored model on a prepared dataset
    Evaluate {
        /// Model archive; overrides evaluate.model
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate the synthetic dataset of the [synthetic] section
    Synth,
    /// Run the numerical self-test battery
    Selfcheck {
        /// Added to every analytic gradient to confirm the check can fail
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_gradient: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(dataset) = cli.dataset {
        cfg.dataset = dataset;
    }
    cfg.apply_seed();
    cfg.validate()?;
    match cli.command {
        Command::Prepare => cmd_prepare(&cfg).map(drop),
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Transfer => cmd_transfer(&cfg, cli.jobs).map(drop),
        Command::Evaluate { model } => {
            if model.is_some() {
                cfg.evaluate.model = model;
            }
            cmd_evaluate(&cfg).map(drop)
        }
        Command::Synth => cmd_synth(&cfg).map(drop),
        Command::Selfcheck { perturb_gradient } => {
            let report = run_selfcheck(SelfCheckOptions {
                gradient_bias: perturb_gradient,
            });
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::SelfCheck)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !e.to_string().contains(&s.to_string()) {
                    eprintln!("  caused by: {s}");
                }
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
