//! Command-line driver: train, sweep, predict, evaluate, ablate.
//!
//! Settings come from an optional flat JSON config file (`--config`) and are
//! overridden by flags. Exit codes: 0 success, 2 input or usage error, 3 data
//! contract violation, 4 numerical failure.

use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::corpus::{load_corpus, Corpus, CorpusError};
use crate::encoder::{EncoderConfig, EncoderError, EncoderModel};
use crate::eval::{emit_report, evaluate, percent, records_from_dump, EvalError, EvalReport};
use crate::fusion::Ablation;
use crate::generator::{
    dump_from_json, dump_to_json, GeneratorKind, Pipeline, PipelineError, PredictionRecord, SlotSource,
};
use crate::selector::{
    best_by_precision, sweep_csv, sweep_threshold, train_selector, SelectorConfig, SelectorError,
    DEFAULT_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONTRACT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Parser)]
#[command(name = "slotfuse", version, about = "Two-stage dialogue state tracking on small corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the slot selector and write a checkpoint plus a per-epoch loss log.
    Train,
    /// Micro precision/recall of the selector over a grid of thresholds.
    Sweep,
    /// Predict the state of every turn and write a prediction dump.
    Predict,
    /// Score a prediction dump against the dataset.
    Evaluate,
    /// Predict and evaluate under every prompt ablation.
    Ablate,
}

#[derive(Debug, Default, Args)]
struct Flags {
    /// Flat JSON file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset JSON (schema, ontology, templates, dialogues)
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Checkpoint path [default: <out>/model.json].
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Prediction dump read by `evaluate` [default: <out>/predictions.json].
    #[arg(long, global = true)]
    predictions: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Relevance threshold in (0, 1).
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Seed for weight init and example shuffling
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// SGD step size
    #[arg(long = "learning-rate", global = true)]
    learning_rate: Option<f64>,
    /// Comma-separated thresholds for `sweep`.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1)]
    grid: Option<Vec<f64>>,
    /// One of full, -prompt, -OT, -CV.
    #[arg(long, global = true, allow_hyphen_values = true)]
    ablation: Option<String>,
    /// One of extractive, gold-oracle.
    #[arg(long, global = true)]
    generator: Option<String>,
}

/// Config file contents; every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    predictions: Option<PathBuf>,
    out: Option<PathBuf>,
    delta: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    max_grad_norm: Option<f64>,
    d_model: Option<usize>,
    d_ff: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    max_len: Option<usize>,
    grid: Option<Vec<f64>>,
    ablation: Option<String>,
    generator: Option<String>,
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
    pub out: PathBuf,
    pub selector: SelectorConfig,
    pub grid: Vec<f64>,
    pub ablation: Ablation,
    pub generator: GeneratorKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Contract,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => EXIT_INPUT,
            ErrorKind::Contract => EXIT_CONTRACT,
            ErrorKind::Numeric => EXIT_NUMERIC,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(stage: &'static str, kind: ErrorKind, message: impl fmt::Display) -> Self {
        CliError {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    fn usage(message: impl fmt::Display) -> Self {
        CliError::new("config", ErrorKind::Input, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

fn corpus_error(stage: &'static str, err: CorpusError) -> CliError {
    let kind = if err.is_input_error() {
        ErrorKind::Input
    } else {
        ErrorKind::Contract
    };
    CliError::new(stage, kind, err)
}

fn encoder_kind(err: &EncoderError) -> ErrorKind {
    match err {
        EncoderError::Io { .. } | EncoderError::Checkpoint(_) => ErrorKind::Input,
        EncoderError::ShapeMismatch(_) | EncoderError::InvalidConfig(_) => ErrorKind::Contract,
    }
}

fn encoder_error(stage: &'static str, err: EncoderError) -> CliError {
    CliError::new(stage, encoder_kind(&err), err)
}

fn selector_error(stage: &'static str, err: SelectorError) -> CliError {
    let kind = match &err {
        SelectorError::NonFiniteLoss { .. } => ErrorKind::Numeric,
        SelectorError::Encoder(e) => encoder_kind(e),
        SelectorError::InvalidThreshold(_) | SelectorError::InvalidConfig(_) => ErrorKind::Input,
        SelectorError::LengthMismatch { .. } | SelectorError::EmptyTrainingSet => ErrorKind::Contract,
    };
    CliError::new(stage, kind, err)
}

fn pipeline_error(err: PipelineError) -> CliError {
    match err {
        PipelineError::Selection(e) => selector_error("predict", e),
        other => CliError::new("predict", ErrorKind::Contract, other),
    }
}

fn eval_error(err: EvalError) -> CliError {
    let kind = match err {
        EvalError::Io { .. } => ErrorKind::Input,
        _ => ErrorKind::Contract,
    };
    CliError::new("evaluate", kind, err)
}

fn write_file(stage: &'static str, path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| {
            CliError::new(stage, ErrorKind::Input, format!("cannot create {}: {e}", parent.display()))
        })?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::new(stage, ErrorKind::Input, format!("cannot write {}: {e}", path.display())))
}

impl RunConfig {
    fn resolve(flags: Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                serde_json::from_str::<FileConfig>(&text).map_err(|e| {
                    CliError::usage(format!("invalid config {}: {e}", path.display()))
                })?
            }
            None => FileConfig::default(),
        };

        let defaults = SelectorConfig::default();
        let encoder_defaults = EncoderConfig::default();
        let out = flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
        let selector = SelectorConfig {
            threshold: flags.delta.or(file.delta).unwrap_or(defaults.threshold),
            learning_rate: flags
                .learning_rate
                .or(file.learning_rate)
                .unwrap_or(defaults.learning_rate),
            epochs: flags.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
            max_grad_norm: file.max_grad_norm.or(defaults.max_grad_norm),
            encoder: EncoderConfig {
                d_model: file.d_model.unwrap_or(encoder_defaults.d_model),
                d_ff: file.d_ff.unwrap_or(encoder_defaults.d_ff),
                heads: file.heads.unwrap_or(encoder_defaults.heads),
                layers: file.layers.unwrap_or(encoder_defaults.layers),
                max_len: file.max_len.unwrap_or(encoder_defaults.max_len),
                seed: encoder_defaults.seed,
            },
        };
        selector.validate().map_err(CliError::usage)?;

        let grid = flags.grid.or(file.grid).unwrap_or_else(|| DEFAULT_GRID.to_vec());
        if grid.is_empty() {
            return Err(CliError::usage("the threshold grid is empty"));
        }
        for &delta in &grid {
            crate::selector::check_threshold(delta).map_err(CliError::usage)?;
        }
        let ablation = match flags.ablation.or(file.ablation) {
            Some(name) => name.parse().map_err(CliError::usage)?,
            None => Ablation::Full,
        };
        let generator = match flags.generator.or(file.generator) {
            Some(name) => name.parse().map_err(CliError::usage)?,
            None => GeneratorKind::Extractive,
        };

        Ok(RunConfig {
            dataset: flags.dataset.or(file.dataset),
            checkpoint: flags
                .checkpoint
                .or(file.checkpoint)
                .unwrap_or_else(|| out.join(CHECKPOINT_FILE)),
            predictions: flags
                .predictions
                .or(file.predictions)
                .unwrap_or_else(|| out.join(PREDICTIONS_FILE)),
            out,
            selector,
            grid,
            ablation,
            generator,
        })
    }

    fn load_dataset(&self, stage: &'static str) -> Result<Corpus, CliError> {
        let path = self
            .dataset
            .as_ref()
            .ok_or_else(|| CliError::new(stage, ErrorKind::Input, "no dataset given (use --dataset)"))?;
        load_corpus(path).map_err(|e| corpus_error(stage, e))
    }

    fn load_checkpoint(&self, stage: &'static str) -> Result<EncoderModel, CliError> {
        EncoderModel::load(&self.checkpoint).map_err(|e| encoder_error(stage, e))
    }
}

pub fn cmd_train(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let corpus = config.load_dataset("train")?;
    let outcome = train_selector(&corpus, &config.selector).map_err(|e| selector_error("train", e))?;

    let mut log = String::from("epoch,loss\n");
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        writeln!(log, "{},{}", epoch + 1, loss).unwrap();
    }
    writeln!(log, "final,{}", outcome.final_loss).unwrap();
    write_file("train", &config.checkpoint, &outcome.model.to_checkpoint_json())?;
    let log_path = config.out.join(TRAIN_LOG_FILE);
    write_file("train", &log_path, &log)?;

    writeln!(
        stdout,
        "trained {} epochs on {} turns; final loss {:.4}\ncheckpoint: {}\nloss log: {}",
        config.selector.epochs,
        corpus.turn_count(),
        outcome.final_loss,
        config.checkpoint.display(),
        log_path.display()
    )
    .ok();
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let corpus = config.load_dataset("sweep")?;
    let model = config.load_checkpoint("sweep")?;
    let rows = sweep_threshold(&model, &corpus, &config.grid).map_err(|e| selector_error("sweep", e))?;
    let csv = sweep_csv(&rows);
    let path = config.out.join(SWEEP_FILE);
    write_file("sweep", &path, &csv)?;
    writeln!(
        stdout,
        "micro-averaged over {} turns and {} schema slots",
        corpus.turn_count(),
        corpus.schema.len()
    )
    .ok();
    write!(stdout, "{csv}").ok();
    if let Some(best) = best_by_precision(&rows) {
        writeln!(
            stdout,
            "best delta: {} (precision {:.1}, recall {:.1})",
            best.delta,
            best.precision * 100.0,
            best.recall * 100.0
        )
        .ok();
    }
    Ok(())
}

fn predict_dump(
    config: &RunConfig,
    corpus: &Corpus,
    model: Option<&EncoderModel>,
    ablation: Ablation,
) -> Result<Vec<PredictionRecord>, CliError> {
    let source = match model {
        Some(model) => SlotSource::encoder(model, corpus, config.selector.threshold)
            .map_err(|e| selector_error("predict", e))?,
        None => SlotSource::Gold,
    };
    let pipeline = Pipeline {
        corpus,
        source,
        ablation,
    };
    pipeline.predict_corpus(config.generator).map_err(pipeline_error)
}

/// The gold-oracle generator runs on gold slot selections and needs no
/// checkpoint.
fn model_for(config: &RunConfig, stage: &'static str) -> Result<Option<EncoderModel>, CliError> {
    match config.generator {
        GeneratorKind::GoldOracle => Ok(None),
        GeneratorKind::Extractive => config.load_checkpoint(stage).map(Some),
    }
}

pub fn cmd_predict(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let corpus = config.load_dataset("predict")?;
    let model = model_for(config, "predict")?;
    let dump = predict_dump(config, &corpus, model.as_ref(), config.ablation)?;
    let path = config.out.join(PREDICTIONS_FILE);
    write_file("predict", &path, &dump_to_json(&dump))?;
    writeln!(
        stdout,
        "predicted {} turns ({}, {}): {}",
        dump.len(),
        config.ablation,
        config.generator,
        path.display()
    )
    .ok();
    Ok(())
}

fn score(corpus: &Corpus, dump: &[PredictionRecord]) -> Result<EvalReport, CliError> {
    let records = records_from_dump(corpus, dump).map_err(eval_error)?;
    evaluate(&records, &corpus.schema).map_err(eval_error)
}

pub fn cmd_evaluate(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let corpus = config.load_dataset("evaluate")?;
    let path = &config.predictions;
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::new("evaluate", ErrorKind::Input, format!("cannot read {}: {e}", path.display()))
    })?;
    let dump = dump_from_json(&text).map_err(|e| {
        CliError::new("evaluate", ErrorKind::Input, format!("invalid dump {}: {e}", path.display()))
    })?;
    let report = score(&corpus, &dump)?;
    emit_report(&report, &config.out).map_err(eval_error)?;
    writeln!(stdout, "JGA,{}\nSA,{}", percent(report.jga), percent(report.sa)).ok();
    Ok(())
}

pub fn cmd_ablate(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let corpus = config.load_dataset("ablate")?;
    let model = model_for(config, "ablate")?;
    let mut csv = String::from("ablation,JGA,SA\n");
    for ablation in Ablation::ALL {
        let dump = predict_dump(config, &corpus, model.as_ref(), ablation)?;
        let report = score(&corpus, &dump)?;
        writeln!(csv, "{ablation},{},{}", percent(report.jga), percent(report.sa)).unwrap();
    }
    let path = config.out.join(ABLATION_FILE);
    write_file("ablate", &path, &csv)?;
    write!(stdout, "{csv}").ok();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to `stderr`.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = err.render().to_string();
            if code == EXIT_OK {
                write!(stdout, "{rendered}").ok();
            } else {
                write!(stderr, "{rendered}").ok();
            }
            return code;
        }
    };
    let result = RunConfig::resolve(cli.flags).and_then(|config| match cli.command {
        Command::Train => cmd_train(&config, stdout),
        Command::Sweep => cmd_sweep(&config, stdout),
        Command::Predict => cmd_predict(&config, stdout),
        Command::Evaluate => cmd_evaluate(&config, stdout),
        Command::Ablate => cmd_ablate(&config, stdout),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            writeln!(stderr, "error {err}").ok();
            err.kind.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
