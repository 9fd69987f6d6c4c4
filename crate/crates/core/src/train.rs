//! Mini-batch training with Adam and dev-based checkpoint selection.

use std::fmt::Write as _;

use emph_tensor::{Adam, AdamConfig, Float, ParamStore, RngStream, Tape};
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::embeddings::EmbeddingTable;
use crate::error::{CoreError, Result};
use crate::eval::{evaluate, MatchReport};
use crate::layers::ForwardCtx;
use crate::model::{batch_loss, predict, AnyModel, ArchConfig, Labeler};
use crate::predictions::PredictionSet;
use crate::seq_model::SeqLabeler;
use crate::subword::build_subword_vocab;
use crate::transformer::TransformerLabeler;
use crate::vocab::build_vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn recurrent() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            shuffle: true,
        }
    }

    pub fn transformer() -> Self {
        Self {
            epochs: 30,
            lr: 2e-5,
            ..Self::recurrent()
        }
    }

    pub fn for_arch(arch: &ArchConfig) -> Self {
        match arch {
            ArchConfig::Bilstm(_) => Self::recurrent(),
            ArchConfig::Transformer(_) => Self::transformer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Token-weighted mean of the training batch losses.
    pub train_bce: f64,
    pub dev: MatchReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_mean: f64,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch\ttrain_bce\tmatch_1\tmatch_2\tmatch_3\tmatch_4\tdev_mean";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for e in &self.epochs {
            let m = &e.dev.matches;
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                e.epoch, e.train_bce, m[0], m[1], m[2], m[3], e.dev.mean
            );
        }
        let _ = writeln!(out, "# best_epoch={} best_dev_mean={:.6}", self.best_epoch, self.best_dev_mean);
        out
    }
}

/// Trains `model` in place. On return the model holds the parameters of
/// the earliest epoch with the best dev mean.
pub fn train<T: Float, M: Labeler<T> + ?Sized>(
    model: &mut M,
    train_set: &[Instance],
    dev_set: &[Instance],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(CoreError::Data("training needs non-empty train and dev sets".into()));
    }
    for inst in train_set.iter().chain(dev_set) {
        model.check(inst)?;
    }
    let gold = PredictionSet::from_gold(dev_set)?;
    let mut adam = Adam::new(model.store(), AdamConfig::with_lr(config.lr));
    let mut shuffle_rng = RngStream::new(config.seed, "shuffle");
    let mut ctx = ForwardCtx::train(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    for epoch in 1..=config.epochs {
        if config.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let (mut total, mut tokens) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut tape = Tape::new();
            let p = model.store().bind(&mut tape);
            let loss = batch_loss(&*model, &mut tape, &p, &batch, &mut ctx)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, batch: bi + 1 });
            }
            let mut grads = tape.backward(loss)?;
            let grads = p.collect(&mut grads);
            adam.step(model.store_mut(), &grads)?;
            let n: usize = batch.iter().map(|i| i.len()).sum();
            total += value * n as f64;
            tokens += n;
        }
        let dev = evaluate(&gold, &predict(&*model, dev_set, config.batch_size)?)?;
        if best.as_ref().is_none_or(|(_, m, _)| dev.mean > *m) {
            best = Some((epoch, dev.mean, model.store().clone()));
        }
        epochs.push(EpochLog {
            epoch,
            train_bce: total / tokens as f64,
            dev,
        });
    }
    let (best_epoch, best_dev_mean, params) = best.expect("at least one epoch");
    model.store_mut().assign(&params)?;
    Ok(TrainLog {
        epochs,
        best_epoch,
        best_dev_mean,
    })
}

/// Builds vocabularies from `train_set`, initializes a model from
/// `config.seed` and trains it.
pub fn train_arch<T: Float>(
    arch: &ArchConfig,
    train_set: &[Instance],
    dev_set: &[Instance],
    embeddings: Option<&EmbeddingTable>,
    config: &TrainConfig,
) -> Result<(AnyModel<T>, TrainLog)> {
    let mut model = init_model(arch, train_set, embeddings, config.seed)?;
    let log = train(&mut model, train_set, dev_set, config)?;
    Ok((model, log))
}

pub fn init_model<T: Float>(
    arch: &ArchConfig,
    train_set: &[Instance],
    embeddings: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<AnyModel<T>> {
    Ok(match arch {
        ArchConfig::Bilstm(c) => {
            let vocab = build_vocab(train_set, c.min_word_freq)?;
            AnyModel::Seq(SeqLabeler::new(c.clone(), vocab, embeddings, seed)?)
        }
        ArchConfig::Transformer(c) => {
            let vocab = build_subword_vocab(train_set, c.max_vocab)?;
            AnyModel::Transformer(TransformerLabeler::new(c.clone(), vocab, seed)?)
        }
    })
}
