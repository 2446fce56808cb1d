//! `fusion` — command line front end: dataset generation, training,
//! evaluation, the gradient-check suite, and the model registry.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fusion_core::checkpoint;
use fusion_core::data::{generate, Dataset, GeneratorSpec};
use fusion_core::gradcheck_suite;
use fusion_core::model::{describe, registry, Model, ModelConfig};
use fusion_core::train::{evaluate, train};

#[derive(Parser)]
#[command(
    name = "fusion",
    version,
    about = "Multimodal gated-fusion modeling toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator spec (JSON)
    Generate {
        /// Generator spec JSON file
        #[arg(long)]
        config: PathBuf,
        /// Output dataset file (JSON lines)
        #[arg(long)]
        out: PathBuf,
        /// Override the spec seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes checkpoint.bin, history.jsonl, and
    /// test_metrics.json into the output directory
    Train {
        /// Model config JSON file
        #[arg(long)]
        config: PathBuf,
        /// Dataset file
        #[arg(long)]
        data: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one dataset split; prints the metrics
    /// report as JSON
    Evaluate {
        /// Model config JSON file
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint produced by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (split membership is derived from the config seed)
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the finite-difference gradient suite; exits 0 iff every check
    /// passes
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Print the model registry
    ListModels,
}

/// Print a line to stdout, exiting quietly when the reader has gone away
/// (`fusion list-models | head` must not panic on the closed pipe).
fn emit(line: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{line}").is_err() {
        std::process::exit(0);
    }
}

fn run(command: Command) -> Result<bool, fusion_core::Error> {
    match command {
        Command::Generate { config, out, seed } => {
            let text = std::fs::read_to_string(&config)?;
            let mut spec: GeneratorSpec = serde_json::from_str(&text)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let dataset = generate(&spec)?;
            dataset.write(&out)?;
            emit(format_args!(
                "{}",
                serde_json::json!({
                    "written": out,
                    "n_samples": dataset.len(),
                })
            ));
            Ok(true)
        }
        Command::Train {
            config,
            data,
            out,
            seed,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut config: ModelConfig = serde_json::from_str(&text)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let dataset = Dataset::read(&data)?;
            let outcome = train(&config, &dataset, Some(&out))?;
            eprintln!(
                "best epoch {} of {}; artifacts in {}",
                outcome.best_epoch,
                outcome.history.len(),
                out.display()
            );
            emit(format_args!(
                "{}",
                serde_json::to_string_pretty(&outcome.test)?
            ));
            Ok(true)
        }
        Command::Evaluate {
            config,
            checkpoint: ckpt,
            data,
            split,
            seed,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut config: ModelConfig = serde_json::from_str(&text)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let dataset = Dataset::read(&data)?;
            let mut model = Model::build(&config, &dataset.header)?;
            checkpoint::load_into(&ckpt, &mut model)?;
            let (train_split, valid_split, test_split) =
                fusion_core::data::split(&dataset, config.seed)?;
            let part = match split {
                SplitName::Train => train_split,
                SplitName::Valid => valid_split,
                SplitName::Test => test_split,
            };
            let report = evaluate(&model, &part, config.batch_size)?;
            emit(format_args!("{}", serde_json::to_string_pretty(&report)?));
            Ok(true)
        }
        Command::Gradcheck { tolerance } => {
            let (entries, all_pass) = gradcheck_suite::run(tolerance)?;
            for e in &entries {
                emit(format_args!(
                    "{} {:<40} max rel err {:.3e}",
                    if e.pass { "PASS" } else { "FAIL" },
                    e.name,
                    e.max_rel
                ));
            }
            emit(format_args!(
                "gradcheck: {} of {} checks passed (tolerance {tolerance:e})",
                entries.iter().filter(|e| e.pass).count(),
                entries.len()
            ));
            Ok(all_pass)
        }
        Command::ListModels => {
            for spec in registry() {
                emit(format_args!("{}", describe(&spec)));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": err.to_string() }));
            ExitCode::from(1)
        }
    }
}
