//! The labeler contract shared by both architectures, batch helpers,
//! scoring and model files.

use emph_tensor::{Bound, Float, ModelFile, ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{CoreError, Result};
use crate::layers::ForwardCtx;
use crate::predictions::{quantize, PredictionSet};
use crate::seq_model::{SeqConfig, SeqLabeler};
use crate::transformer::{TransformerConfig, TransformerLabeler};

pub const SEQ_TAG: &str = "seq_v1";
pub const XFMR_TAG: &str = "xfmr_v1";

/// A per-token emphasis scorer with named parameters.
pub trait Labeler<T: Float>: Send + Sync {
    fn store(&self) -> &ParamStore<T>;

    fn store_mut(&mut self) -> &mut ParamStore<T>;

    /// Scores `[batch·steps × 1]` in batch-major order, where `steps` is
    /// the longest instance in words. Rows past an instance's length are
    /// padding and carry no meaning.
    fn forward(&self, tape: &mut Tape<T>, p: &Bound, batch: &[&Instance], ctx: &mut ForwardCtx) -> Result<Var>;

    /// Rejects instances the model cannot encode.
    fn check(&self, _inst: &Instance) -> Result<()> {
        Ok(())
    }

    fn tag(&self) -> &'static str;

    /// JSON header stored in model files.
    fn meta(&self) -> Result<String>;
}

/// Word counts of a batch.
pub fn lengths(batch: &[&Instance]) -> (Vec<usize>, usize) {
    let lengths: Vec<usize> = batch.iter().map(|i| i.len()).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    (lengths, steps)
}

/// Batch-major gold targets and token mask.
pub fn targets<T: Float>(batch: &[&Instance], steps: usize) -> (Vec<T>, Vec<bool>) {
    let mut gold = Vec::with_capacity(batch.len() * steps);
    let mut mask = Vec::with_capacity(batch.len() * steps);
    for inst in batch {
        for t in 0..steps {
            match inst.tokens.get(t) {
                Some(tok) => {
                    gold.push(T::of(tok.gold_prob));
                    mask.push(true);
                }
                None => {
                    gold.push(T::zero());
                    mask.push(false);
                }
            }
        }
    }
    (gold, mask)
}

/// Token-mean BCE of a batch, recorded on `tape`.
pub fn batch_loss<T: Float, M: Labeler<T> + ?Sized>(
    model: &M,
    tape: &mut Tape<T>,
    p: &Bound,
    batch: &[&Instance],
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let (_, steps) = lengths(batch);
    let scores = model.forward(tape, p, batch, ctx)?;
    let (gold, mask) = targets(batch, steps);
    Ok(tape.bce(scores, &gold, &mask)?)
}

/// Eval-mode scores per instance, in input order.
pub fn score<T: Float, M: Labeler<T> + ?Sized>(model: &M, instances: &[Instance], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 {
        return Err(CoreError::Config("batch size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(instances.len());
    let refs: Vec<&Instance> = instances.iter().collect();
    for chunk in refs.chunks(batch_size) {
        for inst in chunk {
            model.check(inst)?;
        }
        let mut tape = Tape::new();
        let p = model.store().bind(&mut tape);
        let (_, steps) = lengths(chunk);
        let y = model.forward(&mut tape, &p, chunk, &mut ForwardCtx::eval())?;
        let v = tape.value(y).data();
        for (b, inst) in chunk.iter().enumerate() {
            out.push(v[b * steps..b * steps + inst.len()].iter().map(|x| x.as_f64()).collect());
        }
    }
    Ok(out)
}

pub fn predict<T: Float, M: Labeler<T> + ?Sized>(model: &M, instances: &[Instance], batch_size: usize) -> Result<PredictionSet> {
    let scores = score(model, instances, batch_size)?;
    let mut set = PredictionSet::new();
    for (inst, s) in instances.iter().zip(scores) {
        let micros = s.iter().map(|&x| quantize(x)).collect::<Result<Vec<_>>>()?;
        set.insert_micros(inst.id.clone(), micros);
    }
    Ok(set)
}

/// Token-weighted mean BCE over a dataset in eval mode.
pub fn dataset_bce<T: Float, M: Labeler<T> + ?Sized>(model: &M, instances: &[Instance], batch_size: usize) -> Result<f64> {
    let refs: Vec<&Instance> = instances.iter().collect();
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in refs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let p = model.store().bind(&mut tape);
        let loss = batch_loss(model, &mut tape, &p, chunk, &mut ForwardCtx::eval())?;
        let n: usize = chunk.iter().map(|i| i.len()).sum();
        total += tape.value(loss).item().as_f64() * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(CoreError::Data("no tokens to score".into()));
    }
    Ok(total / tokens as f64)
}

/// Architecture plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ArchConfig {
    Bilstm(SeqConfig),
    Transformer(TransformerConfig),
}

pub enum AnyModel<T: Float> {
    Seq(SeqLabeler<T>),
    Transformer(TransformerLabeler<T>),
}

impl<T: Float> AnyModel<T> {
    fn inner(&self) -> &dyn Labeler<T> {
        match self {
            AnyModel::Seq(m) => m,
            AnyModel::Transformer(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Labeler<T> {
        match self {
            AnyModel::Seq(m) => m,
            AnyModel::Transformer(m) => m,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(ModelFile::from_store(self.tag(), self.meta()?, self.store()).encode())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file = ModelFile::decode(bytes, &[SEQ_TAG, XFMR_TAG])?;
        let mut model = match file.tag.as_str() {
            SEQ_TAG => AnyModel::Seq(SeqLabeler::from_meta(&file.meta)?),
            _ => AnyModel::Transformer(TransformerLabeler::from_meta(&file.meta)?),
        };
        file.load_into(model.store_mut())?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl<T: Float> Labeler<T> for AnyModel<T> {
    fn store(&self) -> &ParamStore<T> {
        self.inner().store()
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.inner_mut().store_mut()
    }

    fn forward(&self, tape: &mut Tape<T>, p: &Bound, batch: &[&Instance], ctx: &mut ForwardCtx) -> Result<Var> {
        self.inner().forward(tape, p, batch, ctx)
    }

    fn check(&self, inst: &Instance) -> Result<()> {
        self.inner().check(inst)
    }

    fn tag(&self) -> &'static str {
        self.inner().tag()
    }

    fn meta(&self) -> Result<String> {
        self.inner().meta()
    }
}

/// Constant `[rows × width]` one-hot matrix; `None` entries give zero rows.
pub(crate) fn one_hot<T: Float>(indices: &[Option<usize>], width: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); indices.len() * width];
    for (r, ix) in indices.iter().enumerate() {
        if let Some(i) = ix {
            data[r * width + i] = T::one();
        }
    }
    Tensor::new(vec![indices.len(), width], data).expect("one-hot shape")
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(CoreError::Config(format!("dropout_p must lie in [0, 1), got {p}")))
    }
}

pub(crate) fn check_positive(fields: &[(&str, usize)]) -> Result<()> {
    match fields.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(CoreError::Config(format!("{name} must be positive"))),
        None => Ok(()),
    }
}
