//! `mml`: run matrix scripts, translate model specs into them, and train,
//! score, or gradient-check the resulting models from the shell.
//!
//! Exit codes: 0 success, 2 usage errors, 3 validation errors (files that
//! do not exist or do not parse, shape mismatches, bad configuration),
//! 4 runtime and numeric errors (script failures, capacity errors, failed
//! gradient checks).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use mml::config;
use mml::dsl::DslError;
use mml::matrix::MatrixError;
use mml::nn::NnError;
use mml::plan::PlanError;
use mml::translate::{TestAlgo, TrainAlgo, TranslateError};

mod commands;

#[derive(Parser)]
#[command(name = "mml", version, about = "Declarative matrix ML toolchain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a script with named matrix inputs and outputs.
    Run(RunArgs),
    /// Generate training, gradient, and prediction scripts from a model spec.
    Translate(TranslateArgs),
    /// Translate a model spec, plan, train, and export the learned weights.
    Train(TrainArgs),
    /// Score a dataset with a trained model.
    Predict(PredictArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Script to execute.
    script: PathBuf,
    /// Matrix binding NAME=PATH made visible to the script (repeatable).
    #[arg(long = "input", value_name = "NAME=PATH")]
    inputs: Vec<String>,
    /// Matrix variable NAME written to PATH after the run (repeatable).
    #[arg(long = "output", value_name = "NAME=PATH")]
    outputs: Vec<String>,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args)]
struct TranslateArgs {
    /// Model spec (JSON).
    model: PathBuf,
    /// Directory receiving the generated scripts and the plan manifest.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Model spec (JSON).
    model: PathBuf,
    /// Matrix binding NAME=PATH; training needs X and Y (repeatable).
    #[arg(long = "input", value_name = "NAME=PATH")]
    inputs: Vec<String>,
    /// Directory receiving scripts, plan manifest, and learned weights.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Model spec (JSON).
    model: PathBuf,
    /// Matrix binding NAME=PATH; scoring needs X (repeatable).
    #[arg(long = "input", value_name = "NAME=PATH")]
    inputs: Vec<String>,
    /// Destination binding; scoring writes probs (repeatable).
    #[arg(long = "output", value_name = "NAME=PATH")]
    outputs: Vec<String>,
    /// Weights manifest; defaults to the spec's weights_manifest entry.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// A layer name (affine, relu, conv2d, ...) or a model spec JSON file.
    target: String,
    #[command(flatten)]
    knobs: KnobArgs,
}

/// Tuning flags shared by every command. Each one overrides the config
/// file, which overrides the built-in default.
#[derive(Args)]
struct KnobArgs {
    /// RNG seed (default: 42).
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file supplying any of these knobs.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Rows per minibatch (default: 64).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Passes over the dataset; exclusive with --num-iter (default: 1).
    #[arg(long)]
    epochs: Option<usize>,
    /// Total update steps; exclusive with --epochs.
    #[arg(long)]
    num_iter: Option<usize>,
    /// Training loop shape.
    #[arg(long, value_enum)]
    train_algo: Option<TrainAlgoArg>,
    /// Scoring loop shape.
    #[arg(long, value_enum)]
    test_algo: Option<TestAlgoArg>,
    /// Memory budget in bytes for plan selection (default: 536870912).
    #[arg(long)]
    budget: Option<u64>,
    /// Worker thread cap for parallel scoring (default: 8).
    #[arg(long)]
    workers: Option<usize>,
    /// Density at or below which matrices are stored sparse (default: 0.4).
    #[arg(long)]
    sparsity_threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainAlgoArg {
    Minibatch,
    Batch,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestAlgoArg {
    Minibatch,
    Batch,
    Allreduce,
}

impl From<TrainAlgoArg> for TrainAlgo {
    fn from(a: TrainAlgoArg) -> TrainAlgo {
        match a {
            TrainAlgoArg::Minibatch => TrainAlgo::Minibatch,
            TrainAlgoArg::Batch => TrainAlgo::Batch,
        }
    }
}

impl From<TestAlgoArg> for TestAlgo {
    fn from(a: TestAlgoArg) -> TestAlgo {
        match a {
            TestAlgoArg::Minibatch => TestAlgo::Minibatch,
            TestAlgoArg::Batch => TestAlgo::Batch,
            TestAlgoArg::Allreduce => TestAlgo::Allreduce,
        }
    }
}

/// Optional knob values read from a --config file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    num_iter: Option<usize>,
    train_algo: Option<TrainAlgo>,
    test_algo: Option<TestAlgo>,
    memory_budget_bytes: Option<u64>,
    max_workers: Option<usize>,
    sparsity_threshold: Option<f64>,
}

/// Every knob resolved to a concrete value (flag, then file, then default).
struct Knobs {
    seed: u64,
    batch_size: usize,
    epochs: Option<usize>,
    num_iter: Option<usize>,
    train_algo: TrainAlgo,
    test_algo: TestAlgo,
    budget: u64,
    workers: usize,
    sparsity_threshold: f64,
}

impl KnobArgs {
    fn resolve(&self) -> Result<Knobs, Failure> {
        let file = match &self.config {
            None => FileConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Failure::Validation(format!("config {}: {e}", path.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    Failure::Validation(format!("config {}: {e}", path.display()))
                })?
            }
        };
        // Epochs and iteration count override as a pair: setting either on
        // the command line discards both file values.
        let (epochs, num_iter) = match (self.epochs, self.num_iter) {
            (None, None) => match (file.epochs, file.num_iter) {
                (None, None) => (Some(config::DEFAULT_EPOCHS), None),
                pair => pair,
            },
            pair => pair,
        };
        Ok(Knobs {
            seed: self.seed.or(file.seed).unwrap_or(config::DEFAULT_SEED),
            batch_size: self
                .batch_size
                .or(file.batch_size)
                .unwrap_or(config::DEFAULT_BATCH_SIZE),
            epochs,
            num_iter,
            train_algo: self
                .train_algo
                .map(TrainAlgo::from)
                .or(file.train_algo)
                .unwrap_or_default(),
            test_algo: self
                .test_algo
                .map(TestAlgo::from)
                .or(file.test_algo)
                .unwrap_or_default(),
            budget: self
                .budget
                .or(file.memory_budget_bytes)
                .unwrap_or(config::DEFAULT_MEMORY_BUDGET),
            workers: self
                .workers
                .or(file.max_workers)
                .unwrap_or(config::DEFAULT_MAX_WORKERS),
            sparsity_threshold: self
                .sparsity_threshold
                .or(file.sparsity_threshold)
                .unwrap_or(config::DEFAULT_SPARSITY_THRESHOLD),
        })
    }
}

/// A failed command, classified for the exit code.
enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl From<TranslateError> for Failure {
    fn from(e: TranslateError) -> Failure {
        Failure::Validation(e.to_string())
    }
}

impl From<MatrixError> for Failure {
    fn from(e: MatrixError) -> Failure {
        Failure::Validation(e.to_string())
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

/// Script problems split by phase: a script that does not parse or resolve
/// failed validation, one that dies mid-run is a runtime error.
fn script_failure(e: DslError) -> Failure {
    match e {
        DslError::Syntax { .. }
        | DslError::Import { .. }
        | DslError::ImportCycle { .. }
        | DslError::DuplicateFunction { .. }
        | DslError::DuplicateNamespace { .. }
        | DslError::ImportedStatement { .. } => Failure::Validation(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

/// Splits a repeatable NAME=PATH flag value.
fn parse_binding(raw: &str) -> Result<(String, PathBuf), Failure> {
    match raw.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(Failure::Usage(format!(
            "binding {raw:?} is not of the form NAME=PATH"
        ))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => commands::run(args),
        Cmd::Translate(args) => commands::translate(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::Predict(args) => commands::predict(args),
        Cmd::Gradcheck(args) => commands::gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
