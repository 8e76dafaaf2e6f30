use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use framenet::network::FloatWidth;
use framenet::{Error, Result};
use framenet_cli::commands::{self, Selection, TrainArgs};
use framenet_cli::config::ExperimentConfig;
use framenet_cli::{exit_code, EXIT_CONFIG};

/// Frame-classification experiments with dense, convolutional and locally
/// untied networks.
#[derive(Debug, Parser)]
#[command(name = "framenet", version)]
struct Cli {
    /// JSON experiment configuration (defaults apply when absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Select {
    Best,
    Final,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or import) train and dev datasets.
    GenData {
        /// Import the training split from CSV (`f0,...,label`) instead of generating.
        #[arg(long, requires = "dev_csv")]
        csv: Option<PathBuf>,
        #[arg(long, requires = "csv")]
        dev_csv: Option<PathBuf>,
        /// Scramble feature columns with one seeded permutation.
        #[arg(long)]
        permute: bool,
    },
    /// Train a network; writes the model, an epoch log and a summary.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Continue from this checkpoint (its log is extended if present).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Which network to save.
        #[arg(long, value_enum, default_value = "final")]
        select: Select,
        #[arg(long, value_enum, default_value = "f64")]
        precision: Precision,
    },
    /// Cross-entropy, accuracy and grouped confusion as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `uniform`, or a dataset whose label counts give the priors.
        #[arg(long)]
        priors: Option<String>,
    },
    /// Coding-property and confusion CSVs for every hidden layer.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of inputs to sample.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// One run per depth × size × optimizer with a summary CSV.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("FRAMENET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "FRAMENET_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData {
            csv,
            dev_csv,
            permute,
        } => {
            cfg.data.permute |= permute;
            let csv = csv.as_deref().zip(dev_csv.as_deref());
            commands::gen_data(&cfg, csv, out)?;
        }
        Command::Train {
            data,
            dev,
            resume,
            select,
            precision,
        } => {
            let args = TrainArgs {
                data,
                dev,
                resume,
                select: match select {
                    Select::Best => Selection::Best,
                    Select::Final => Selection::Final,
                },
                width: match precision {
                    Precision::F32 => FloatWidth::F32,
                    Precision::F64 => FloatWidth::F64,
                },
            };
            commands::train_cmd(&cfg, &args, out)?;
        }
        Command::Eval {
            model,
            data,
            priors,
        } => {
            let report = commands::eval_cmd(&cfg, &model, &data, priors.as_deref())?;
            let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
            println!("{text}");
        }
        Command::Analyze {
            model,
            data,
            sample,
        } => {
            commands::analyze_cmd(&cfg, &model, &data, sample, out)?;
        }
        Command::Sweep { data, dev } => {
            commands::sweep_cmd(&cfg, &data, &dev, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
