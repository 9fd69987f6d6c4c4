//! Recurrent labeler: character BiLSTM word features, highway, word
//! embeddings, stacked bidirectional encoder, self-attention, POS one-hot
//! and a sigmoid head.

use emph_tensor::init::uniform;
use emph_tensor::{Bound, Float, ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{Instance, PosTag};
use crate::embeddings::EmbeddingTable;
use crate::error::{CoreError, Result};
use crate::layers::{init_rng, time_to_batch_major, BiRecurrent, CellKind, ForwardCtx, Highway, SelfAttention, SigmoidMlp};
use crate::model::{check_dropout, check_positive, lengths, one_hot, Labeler, SEQ_TAG};
use crate::vocab::{Vocab, PAD};

pub const EMBED_INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqConfig {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub encoder_kind: CellKind,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub attn_proj_dim: usize,
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub pos_onehot_dim: usize,
    pub word_dim: usize,
    pub min_word_freq: usize,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            char_dim: 50,
            char_hidden: 300,
            encoder_kind: CellKind::Lstm,
            encoder_hidden: 512,
            encoder_layers: 2,
            attn_proj_dim: 256,
            fc_hidden: 20,
            dropout_p: 0.3,
            pos_onehot_dim: 18,
            word_dim: 100,
            min_word_freq: 1,
        }
    }
}

impl SeqConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive(&[
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("attn_proj_dim", self.attn_proj_dim),
            ("fc_hidden", self.fc_hidden),
            ("word_dim", self.word_dim),
        ])?;
        check_dropout(self.dropout_p)?;
        if self.pos_onehot_dim < PosTag::ALL.len() {
            return Err(CoreError::Config(format!(
                "pos_onehot_dim must be at least {}",
                PosTag::ALL.len()
            )));
        }
        Ok(())
    }

    /// Width of each stage, from character features to the head input.
    pub fn stage_widths(&self) -> [usize; 6] {
        let ch = 2 * self.char_hidden;
        let enc = 2 * self.encoder_hidden;
        [ch, ch, ch + self.word_dim, enc, enc, enc + self.pos_onehot_dim]
    }
}

#[derive(Serialize, Deserialize)]
struct SeqMeta {
    config: SeqConfig,
    vocab: Vocab,
}

#[derive(Clone, Debug)]
pub struct SeqLabeler<T> {
    config: SeqConfig,
    vocab: Vocab,
    store: ParamStore<T>,
    pub char_emb: usize,
    pub char_rnn: BiRecurrent,
    pub highway: Highway,
    pub word_emb: usize,
    pub encoder: BiRecurrent,
    pub attention: SelfAttention,
    pub head: SigmoidMlp,
}

impl<T: Float> SeqLabeler<T> {
    /// Fresh model. Word vectors come from `embeddings` when given (its
    /// dimension must equal `word_dim`), else from a small uniform draw.
    pub fn new(config: SeqConfig, vocab: Vocab, embeddings: Option<&EmbeddingTable>, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let mut chars: Tensor<T> = uniform(
            vec![vocab.chars.len(), c.char_dim],
            -EMBED_INIT_RANGE,
            EMBED_INIT_RANGE,
            &mut init_rng(seed, "char_emb"),
        );
        chars.data_mut()[..c.char_dim].fill(T::zero());
        let char_emb = store.insert("char_emb", chars);
        let char_rnn = BiRecurrent::new(&mut store, "char_rnn", CellKind::Lstm, c.char_dim, c.char_hidden, 1, seed);
        let highway = Highway::new(&mut store, "highway", 2 * c.char_hidden, seed);

        let words = match embeddings {
            Some(table) if table.dim() != c.word_dim => {
                return Err(CoreError::Config(format!(
                    "embedding dimension {} does not match word_dim {}",
                    table.dim(),
                    c.word_dim
                )))
            }
            Some(table) => table.matrix(&vocab),
            None => {
                let mut t: Tensor<T> = uniform(
                    vec![vocab.words.len(), c.word_dim],
                    -EMBED_INIT_RANGE,
                    EMBED_INIT_RANGE,
                    &mut init_rng(seed, "word_emb"),
                );
                t.data_mut()[..c.word_dim].fill(T::zero());
                t
            }
        };
        let word_emb = store.insert("word_emb", words);

        let enc_in = 2 * c.char_hidden + c.word_dim;
        let encoder = BiRecurrent::new(&mut store, "encoder", c.encoder_kind, enc_in, c.encoder_hidden, c.encoder_layers, seed);
        let attention = SelfAttention::new(&mut store, "attention", 2 * c.encoder_hidden, c.attn_proj_dim, seed);
        let head = SigmoidMlp::new(
            &mut store,
            "head",
            &[2 * c.encoder_hidden + c.pos_onehot_dim, c.fc_hidden, 1],
            c.dropout_p,
            seed,
        );
        Ok(Self {
            config,
            vocab,
            store,
            char_emb,
            char_rnn,
            highway,
            word_emb,
            encoder,
            attention,
            head,
        })
    }

    pub fn from_meta(meta: &str) -> Result<Self> {
        let m: SeqMeta = serde_json::from_str(meta)?;
        Self::new(m.config, m.vocab, None, 0)
    }

    pub fn config(&self) -> &SeqConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Character BiLSTM outputs at each word's last character, word
    /// time-major (`[steps·batch × 2·char_hidden]`).
    pub fn char_word_features(&self, tape: &mut Tape<T>, p: &Bound, batch: &[&Instance], steps: usize) -> Result<Var> {
        let b = batch.len();
        let texts: Vec<Vec<usize>> = batch
            .iter()
            .map(|inst| inst.text().chars().map(|ch| self.vocab.char(ch)).collect())
            .collect();
        let char_lengths: Vec<usize> = texts.iter().map(Vec::len).collect();
        let char_steps = char_lengths.iter().copied().max().unwrap_or(0);

        let mut ids = Vec::with_capacity(char_steps * b);
        for t in 0..char_steps {
            for text in &texts {
                ids.push(text.get(t).copied().unwrap_or(PAD));
            }
        }
        let emb = tape.gather_rows(p.var(self.char_emb), &ids)?;
        let states = self.char_rnn.forward(tape, p, emb, char_steps, &char_lengths)?;

        let mut rows = Vec::with_capacity(steps * b);
        for t in 0..steps {
            for (bi, inst) in batch.iter().enumerate() {
                rows.push(match last_char_positions(inst).get(t) {
                    Some(&pos) => pos * b + bi,
                    None => bi,
                });
            }
        }
        Ok(tape.gather_rows(states, &rows)?)
    }
}

/// Offset of each word's last character in the space-joined text.
pub fn last_char_positions(inst: &Instance) -> Vec<usize> {
    let mut pos = Vec::with_capacity(inst.len());
    let mut offset = 0;
    for tok in &inst.tokens {
        let n = tok.surface.chars().count();
        pos.push(offset + n - 1);
        offset += n + 1;
    }
    pos
}

impl<T: Float> Labeler<T> for SeqLabeler<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape<T>, p: &Bound, batch: &[&Instance], ctx: &mut ForwardCtx) -> Result<Var> {
        let (lens, steps) = lengths(batch);
        if lens.contains(&0) {
            return Err(CoreError::Data("instance without tokens".into()));
        }
        let b = batch.len();
        let chars = self.char_word_features(tape, p, batch, steps)?;
        let chars = self.highway.forward(tape, p, chars)?;

        let mut word_ids = Vec::with_capacity(steps * b);
        for t in 0..steps {
            for inst in batch {
                word_ids.push(inst.tokens.get(t).map_or(PAD, |tok| self.vocab.word(&tok.surface)));
            }
        }
        let words = tape.gather_rows(p.var(self.word_emb), &word_ids)?;
        let x = tape.concat_cols(&[chars, words])?;
        let x = ctx.dropout(tape, x, self.config.dropout_p, "embed")?;

        let h = self.encoder.forward(tape, p, x, steps, &lens)?;
        let h = ctx.dropout(tape, h, self.config.dropout_p, "encoder")?;
        let h = tape.gather_rows(h, &time_to_batch_major(steps, b))?;
        let h = self.attention.forward(tape, p, h, steps, &lens)?;

        let pos: Vec<Option<usize>> = batch
            .iter()
            .flat_map(|inst| (0..steps).map(move |t| inst.tokens.get(t).map(|tok| tok.pos.index())))
            .collect();
        let pos = tape.constant(one_hot(&pos, self.config.pos_onehot_dim));
        let feats = tape.concat_cols(&[h, pos])?;
        self.head.forward(tape, p, feats, ctx)
    }

    fn tag(&self) -> &'static str {
        SEQ_TAG
    }

    fn meta(&self) -> Result<String> {
        Ok(serde_json::to_string(&SeqMeta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Token;
    use crate::model::score;
    use crate::vocab::build_vocab;

    fn toy_config() -> SeqConfig {
        SeqConfig {
            char_dim: 4,
            char_hidden: 4,
            encoder_hidden: 5,
            encoder_layers: 2,
            attn_proj_dim: 4,
            fc_hidden: 6,
            word_dim: 4,
            ..SeqConfig::default()
        }
    }

    fn inst(id: &str, words: &[&str]) -> Instance {
        Instance {
            id: id.into(),
            tokens: words.iter().map(|w| Token::with_prob(*w, PosTag::Noun, 0.5)).collect(),
        }
    }

    #[test]
    fn last_char_offsets() {
        assert_eq!(last_char_positions(&inst("a", &["ab", "c", "def"])), vec![1, 3, 7]);
    }

    #[test]
    fn default_stage_widths() {
        assert_eq!(SeqConfig::default().stage_widths(), [600, 600, 700, 1024, 1024, 1042]);
    }

    #[test]
    fn one_score_per_token() {
        let data = vec![inst("a", &["x", "yy", "zzz"]), inst("b", &["q"])];
        let vocab = build_vocab(&data, 1).unwrap();
        let m = SeqLabeler::<f64>::new(toy_config(), vocab, None, 7).unwrap();
        let s = score(&m, &data, 2).unwrap();
        assert_eq!(s[0].len(), 3);
        assert_eq!(s[1].len(), 1);
        assert!(s.iter().flatten().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn zero_head_gives_half() {
        let data = vec![inst("a", &["x", "yy"])];
        let vocab = build_vocab(&data, 1).unwrap();
        let mut m = SeqLabeler::<f64>::new(toy_config(), vocab, None, 7).unwrap();
        for l in m.head.layers.clone() {
            for id in l.param_ids() {
                let shape = m.store.get(id).shape().to_vec();
                *m.store.get_mut(id) = Tensor::zeros(shape);
            }
        }
        let s = score(&m, &data, 1).unwrap();
        assert!(s[0].iter().all(|&x| x == 0.5));
    }

    #[test]
    fn embedding_dimension_mismatch_is_rejected() {
        let data = vec![inst("a", &["x"])];
        let vocab = build_vocab(&data, 1).unwrap();
        let table = crate::embeddings::parse_embeddings("x 0.1 0.2\n", None).unwrap();
        assert!(SeqLabeler::<f32>::new(toy_config(), vocab, Some(&table), 0).is_err());
    }
}
