//! Command-line front end: `train`, `predict`, `eval`, `ensemble` and `heatmap`.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data or contract error.
//! `EMPH_PRECISION=32|64` selects the float width for training and prediction.

pub mod heatmap;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use emph_core::data::{parse_dataset, read_dataset, Instance};
use emph_core::embeddings::load_embeddings;
use emph_core::model::{predict, AnyModel, ArchConfig};
use emph_core::predictions::HEADER;
use emph_core::seq_model::SeqConfig;
use emph_core::train::{train_arch, TrainConfig};
use emph_core::transformer::TransformerConfig;
use emph_core::{ensemble_average, evaluate, CoreError, PredictionSet};
use emph_tensor::Float;
use thiserror::Error;

use heatmap::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(_) | CliError::Io { .. } => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "emph", version, about = "Word emphasis selection: train, predict, evaluate, ensemble, visualize")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Bilstm,
    Transformer,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and print the per-epoch log as TSV.
    Train {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Word vectors in text format (word followed by its components).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON object overriding architecture fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_shuffle: bool,
    },
    /// Score every token of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Match_m report of predictions against gold (a dataset or a prediction file).
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Print one `key=value` line per quantity instead of the table.
        #[arg(long)]
        per_m: bool,
    },
    /// Average several prediction files token by token.
    Ensemble {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Render predictions as a heatmap.
    Heatmap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Add a gold row under every prediction row.
        #[arg(long)]
        gold: bool,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn from_env() -> Result<Self> {
        match std::env::var("EMPH_PRECISION") {
            Err(std::env::VarError::NotPresent) => Ok(Precision::F32),
            Ok(v) if v == "32" => Ok(Precision::F32),
            Ok(v) if v == "64" => Ok(Precision::F64),
            Ok(v) => Err(CliError::Usage(format!("EMPH_PRECISION must be 32 or 64, got {v:?}"))),
            Err(e) => Err(CliError::Usage(format!("EMPH_PRECISION: {e}"))),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::Train {
            arch,
            train,
            dev,
            embeddings,
            epochs,
            lr,
            batch,
            seed,
            out: model_path,
            config,
            no_shuffle,
        } => {
            let arch = arch_config(arch, config.as_deref())?;
            let mut cfg = TrainConfig::for_arch(&arch);
            cfg.seed = seed;
            cfg.shuffle = !no_shuffle;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let precision = Precision::from_env()?;
            let train_set = read_dataset(&train)?;
            let dev_set = read_dataset(&dev)?;
            let table = embeddings.map(|p| load_embeddings(&p, None)).transpose()?;
            let log = match precision {
                Precision::F32 => {
                    let (model, log) = train_arch::<f32>(&arch, &train_set, &dev_set, table.as_ref(), &cfg)?;
                    model.save(&model_path)?;
                    log
                }
                Precision::F64 => {
                    let (model, log) = train_arch::<f64>(&arch, &train_set, &dev_set, table.as_ref(), &cfg)?;
                    model.save(&model_path)?;
                    log
                }
            };
            emit(out, &log.to_tsv())
        }
        Command::Predict { model, data, out: pred_path, batch } => {
            if batch == 0 {
                return Err(CliError::Usage("--batch must be at least 1".into()));
            }
            let precision = Precision::from_env()?;
            let instances = read_dataset(&data)?;
            let preds = match precision {
                Precision::F32 => predict_with::<f32>(&model, &instances, batch)?,
                Precision::F64 => predict_with::<f64>(&model, &instances, batch)?,
            };
            preds.write(&pred_path)?;
            Ok(())
        }
        Command::Eval { gold, pred, per_m } => {
            let gold = read_gold(&gold)?;
            let pred = PredictionSet::read(&pred)?;
            let report = evaluate(&gold, &pred)?;
            emit(out, &if per_m { report.key_values() } else { report.table() })
        }
        Command::Ensemble { out: path, inputs } => {
            let sets = inputs.iter().map(|p| PredictionSet::read(p)).collect::<emph_core::Result<Vec<_>>>()?;
            ensemble_average(&sets)?.write(&path)?;
            Ok(())
        }
        Command::Heatmap {
            data,
            pred,
            gold,
            format,
            out: path,
        } => {
            let instances = read_dataset(&data)?;
            let preds = PredictionSet::read(&pred)?;
            let doc = heatmap::render(format, &instances, &preds, gold)?;
            std::fs::write(&path, doc).map_err(|source| CliError::Io { path, source })
        }
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn arch_config(arch: Arch, overrides: Option<&Path>) -> Result<ArchConfig> {
    let json = match overrides {
        Some(path) => std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?,
        None => "{}".to_owned(),
    };
    let bad = |e: serde_json::Error| CliError::Usage(format!("--config: {e}"));
    let config = match arch {
        Arch::Bilstm => {
            let c: SeqConfig = serde_json::from_str(&json).map_err(bad)?;
            c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            ArchConfig::Bilstm(c)
        }
        Arch::Transformer => {
            let c: TransformerConfig = serde_json::from_str(&json).map_err(bad)?;
            c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            ArchConfig::Transformer(c)
        }
    };
    Ok(config)
}

fn predict_with<T: Float>(model: &Path, instances: &[Instance], batch: usize) -> Result<PredictionSet> {
    let model = AnyModel::<T>::load(model)?;
    Ok(predict(&model, instances, batch)?)
}

/// Gold scores from either a prediction file or a dataset file.
fn read_gold(path: &Path) -> Result<PredictionSet> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    if text.lines().next() == Some(HEADER) {
        Ok(PredictionSet::from_tsv(&text)?)
    } else {
        Ok(PredictionSet::from_gold(&parse_dataset(&text)?)?)
    }
}
