//! Small transformer encoder labeler: subword embeddings with sinusoidal
//! positions, post-norm encoder blocks, all-layer concatenation, word
//! pooling over subtokens and a sigmoid classifier.

use emph_tensor::init::uniform;
use emph_tensor::{Bound, Float, ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{CoreError, Result};
use crate::layers::{
    batch_to_time_major, init_rng, sinusoidal_positions, time_to_batch_major, BiRecurrent, CellKind, ForwardCtx,
    LayerNorm, Linear, MultiHeadAttention, SelfAttention, SigmoidMlp,
};
use crate::model::{check_dropout, check_positive, lengths, Labeler, XFMR_TAG};
use crate::seq_model::EMBED_INIT_RANGE;
use crate::subword::{SubwordTokenization, SubwordVocab, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    First,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mlp,
    BilstmAttn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadProfile {
    Normal,
    Large,
}

impl HeadProfile {
    pub fn dims(self) -> (usize, usize) {
        match self {
            HeadProfile::Normal => (300, 20),
            HeadProfile::Large => (900, 40),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub head_dims: (usize, usize),
    pub freeze_first_k: usize,
    pub pooling: Pooling,
    pub include_embedding_layer: bool,
    pub head_kind: HeadKind,
    /// Recurrent width per direction for `head_kind = bilstm_attn`.
    pub head_rnn_hidden: usize,
    pub head_attn_proj_dim: usize,
    pub max_vocab: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            max_len: 64,
            dropout_p: 0.3,
            head_dims: HeadProfile::Normal.dims(),
            freeze_first_k: 0,
            pooling: Pooling::First,
            include_embedding_layer: true,
            head_kind: HeadKind::Mlp,
            head_rnn_hidden: 128,
            head_attn_proj_dim: 128,
            max_vocab: 8000,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive(&[
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("head_dims.0", self.head_dims.0),
            ("head_dims.1", self.head_dims.1),
            ("head_rnn_hidden", self.head_rnn_hidden),
            ("head_attn_proj_dim", self.head_attn_proj_dim),
        ])?;
        check_dropout(self.dropout_p)?;
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_len < 3 {
            return Err(CoreError::Config("max_len must leave room for <bos>, <eos> and one subtoken".into()));
        }
        if self.freeze_first_k > self.layers + 1 {
            return Err(CoreError::Config(format!(
                "freeze_first_k {} exceeds the {} freezable layers",
                self.freeze_first_k,
                self.layers + 1
            )));
        }
        Ok(())
    }

    /// Per-position width of the concatenated encoder output.
    pub fn output_width(&self) -> usize {
        let n = if self.include_embedding_layer { self.layers + 1 } else { self.layers };
        n * self.d_model
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    fn new<T: Float>(store: &mut ParamStore<T>, name: &str, c: &TransformerConfig, seed: u64) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), c.d_model, c.heads, seed),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c.d_model),
            ff1: Linear::new(store, &format!("{name}.ff1"), c.d_model, c.d_ff, true, seed),
            ff2: Linear::new(store, &format!("{name}.ff2"), c.d_ff, c.d_model, true, seed),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c.d_model),
        }
    }

    fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, steps: usize, lens: &[usize]) -> Result<Var> {
        let a = self.attention.forward(tape, p, x, steps, lens)?;
        let x = tape.add(x, a)?;
        let x = self.norm1.forward(tape, p, x)?;
        let f = self.ff1.forward(tape, p, x)?;
        let f = tape.relu(f);
        let f = self.ff2.forward(tape, p, f)?;
        let x = tape.add(x, f)?;
        self.norm2.forward(tape, p, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Mlp(SigmoidMlp),
    BilstmAttn {
        rnn: BiRecurrent,
        attention: SelfAttention,
        mlp: SigmoidMlp,
    },
}

#[derive(Serialize, Deserialize)]
struct XfmrMeta {
    config: TransformerConfig,
    vocab: SubwordVocab,
}

#[derive(Clone, Debug)]
pub struct TransformerLabeler<T> {
    config: TransformerConfig,
    vocab: SubwordVocab,
    store: ParamStore<T>,
    pub token_emb: usize,
    pub blocks: Vec<EncoderBlock>,
    pub head: Head,
}

impl<T: Float> TransformerLabeler<T> {
    pub fn new(config: TransformerConfig, vocab: SubwordVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let mut emb = uniform(
            vec![vocab.len(), c.d_model],
            -EMBED_INIT_RANGE,
            EMBED_INIT_RANGE,
            &mut init_rng(seed, "token_emb"),
        );
        emb.data_mut()[PAD * c.d_model..(PAD + 1) * c.d_model].fill(T::zero());
        let token_emb = store.insert("token_emb", emb);
        let mut frozen = vec![];
        if c.freeze_first_k >= 1 {
            frozen.push(token_emb);
        }
        let mut blocks = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let before = store.len();
            blocks.push(EncoderBlock::new(&mut store, &format!("block{l}"), c, seed));
            if l + 1 < c.freeze_first_k {
                frozen.extend(before..store.len());
            }
        }
        for id in frozen {
            store.set_frozen(id, true);
        }

        let width = c.output_width();
        let (h1, h2) = c.head_dims;
        let head = match c.head_kind {
            HeadKind::Mlp => Head::Mlp(SigmoidMlp::new(&mut store, "head", &[width, h1, h2, 1], c.dropout_p, seed)),
            HeadKind::BilstmAttn => {
                let rnn = BiRecurrent::new(&mut store, "head.rnn", CellKind::Lstm, width, c.head_rnn_hidden, 1, seed);
                let attention = SelfAttention::new(&mut store, "head.attn", 2 * c.head_rnn_hidden, c.head_attn_proj_dim, seed);
                let mlp = SigmoidMlp::new(&mut store, "head", &[2 * c.head_rnn_hidden, h1, h2, 1], c.dropout_p, seed);
                Head::BilstmAttn { rnn, attention, mlp }
            }
        };
        Ok(Self {
            config,
            vocab,
            store,
            token_emb,
            blocks,
            head,
        })
    }

    pub fn from_meta(meta: &str) -> Result<Self> {
        let m: XfmrMeta = serde_json::from_str(meta)?;
        Self::new(m.config, m.vocab, 0)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    /// Ids of the parameters that training leaves untouched.
    pub fn frozen_params(&self) -> Vec<usize> {
        (0..self.store.len()).filter(|&i| self.store.is_frozen(i)).collect()
    }

    fn tokenize_checked(&self, inst: &Instance) -> Result<SubwordTokenization> {
        let t = self.vocab.tokenize(inst);
        if t.ids.len() > self.config.max_len {
            return Err(CoreError::Data(format!(
                "instance {:?} needs {} positions, exceeding max_len {}",
                inst.id,
                t.ids.len(),
                self.config.max_len
            )));
        }
        Ok(t)
    }

    /// Concatenated layer outputs, batch-major `[batch·steps × width]`.
    pub fn encode(&self, tape: &mut Tape<T>, p: &Bound, seqs: &[SubwordTokenization]) -> Result<(Var, usize)> {
        let steps = seqs.iter().map(|s| s.ids.len()).max().unwrap_or(0);
        let lens: Vec<usize> = seqs.iter().map(|s| s.ids.len()).collect();
        let ids: Vec<usize> = seqs
            .iter()
            .flat_map(|s| (0..steps).map(move |t| s.ids.get(t).copied().unwrap_or(PAD)))
            .collect();
        let emb = tape.gather_rows(p.var(self.token_emb), &ids)?;
        let pe = tape.constant(sinusoidal_positions(steps, self.config.d_model));
        let pos_rows: Vec<usize> = (0..seqs.len()).flat_map(|_| 0..steps).collect();
        let pe = tape.gather_rows(pe, &pos_rows)?;
        let mut x = tape.add(emb, pe)?;

        let mut outputs = Vec::with_capacity(self.blocks.len() + 1);
        if self.config.include_embedding_layer {
            outputs.push(x);
        }
        for block in &self.blocks {
            x = block.forward(tape, p, x, steps, &lens)?;
            outputs.push(x);
        }
        Ok((tape.concat_cols(&outputs)?, steps))
    }

    /// One row per word slot, batch-major over `word_steps`.
    pub fn pool(&self, tape: &mut Tape<T>, enc: Var, seqs: &[SubwordTokenization], steps: usize, word_steps: usize) -> Result<Var> {
        let mut groups = Vec::with_capacity(seqs.len() * word_steps);
        for (b, s) in seqs.iter().enumerate() {
            for w in 0..word_steps {
                groups.push(match s.spans.get(w) {
                    Some(&(start, n)) => match self.config.pooling {
                        Pooling::First => vec![b * steps + start],
                        Pooling::Mean => (start..start + n).map(|r| b * steps + r).collect(),
                    },
                    None => vec![b * steps],
                });
            }
        }
        Ok(tape.pool_rows(enc, groups)?)
    }
}

impl<T: Float> Labeler<T> for TransformerLabeler<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape<T>, p: &Bound, batch: &[&Instance], ctx: &mut ForwardCtx) -> Result<Var> {
        let (lens, word_steps) = lengths(batch);
        if lens.contains(&0) {
            return Err(CoreError::Data("instance without tokens".into()));
        }
        let seqs = batch.iter().map(|i| self.tokenize_checked(i)).collect::<Result<Vec<_>>>()?;
        let (enc, steps) = self.encode(tape, p, &seqs)?;
        let pooled = self.pool(tape, enc, &seqs, steps, word_steps)?;
        match &self.head {
            Head::Mlp(mlp) => mlp.forward(tape, p, pooled, ctx),
            Head::BilstmAttn { rnn, attention, mlp } => {
                let b = batch.len();
                let x = tape.gather_rows(pooled, &batch_to_time_major(word_steps, b))?;
                let h = rnn.forward(tape, p, x, word_steps, &lens)?;
                let h = tape.gather_rows(h, &time_to_batch_major(word_steps, b))?;
                let h = attention.forward(tape, p, h, word_steps, &lens)?;
                mlp.forward(tape, p, h, ctx)
            }
        }
    }

    fn check(&self, inst: &Instance) -> Result<()> {
        self.tokenize_checked(inst).map(|_| ())
    }

    fn tag(&self) -> &'static str {
        XFMR_TAG
    }

    fn meta(&self) -> Result<String> {
        Ok(serde_json::to_string(&XfmrMeta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })?)
    }
}
