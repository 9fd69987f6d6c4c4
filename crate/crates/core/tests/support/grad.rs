//! Finite-difference cases for every layer kind and both full models at
//! 64-bit precision. Each case returns the worst relative error for one seed.

use emph_core::data::{Instance, PosTag, Token};
use emph_core::layers::{
    BiRecurrent, CellKind, ForwardCtx, Highway, LayerNorm, MultiHeadAttention, Recurrent, SelfAttention, SigmoidMlp,
    StepMasks,
};
use emph_core::model::{batch_loss, Labeler};
use emph_core::seq_model::{SeqConfig, SeqLabeler};
use emph_core::subword::build_subword_vocab;
use emph_core::transformer::{HeadKind, Pooling, TransformerConfig, TransformerLabeler};
use emph_core::vocab::build_vocab;
use emph_tensor::init::uniform;
use emph_tensor::{grad_check_params, summarize, Bound, ParamStore, RngStream, Tape, Tensor, Var};

pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 10;

pub type Case = (&'static str, fn(u64) -> f64);

pub const CASES: [Case; 9] = [
    ("highway", highway),
    ("lstm cell", |s| recurrent(CellKind::Lstm, s)),
    ("gru cell", |s| recurrent(CellKind::Gru, s)),
    ("stacked bidirectional encoder", stacked_encoder),
    ("attention layers", attention),
    ("layer norm", layer_norm),
    ("sigmoid head with bce", sigmoid_head),
    ("recurrent model", full_recurrent),
    ("transformer model", full_transformer),
];

fn random(shape: Vec<usize>, seed: u64, label: &str) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, &mut RngStream::new(seed, label))
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output coordinate matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> emph_tensor::Result<Var> {
    let r = tape.constant(random(tape.shape(y).to_vec(), seed, "projection"));
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

/// Worst relative error, or infinity when the check fails or checks nothing.
fn worst<F>(store: &ParamStore<f64>, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &Bound) -> emph_tensor::Result<Var>,
{
    match grad_check_params(store, f) {
        Ok(reports) => {
            let r = summarize(&reports);
            if r.checked == 0 {
                f64::INFINITY
            } else {
                r.max_rel_err
            }
        }
        Err(_) => f64::INFINITY,
    }
}

fn core<T>(r: emph_core::Result<T>) -> emph_tensor::Result<T> {
    r.map_err(|e| emph_tensor::TensorError::Contract(e.to_string()))
}

fn highway(seed: u64) -> f64 {
    let mut s = ParamStore::new();
    let hw = Highway::new(&mut s, "hw", 4, seed);
    let x = s.insert("x", random(vec![3, 4], seed, "x"));
    worst(&s, |t, p| {
        let y = core(hw.forward(t, p, p.var(x)))?;
        project(t, y, seed)
    })
}

fn recurrent(kind: CellKind, seed: u64) -> f64 {
    let mut s = ParamStore::new();
    let cell = Recurrent::new(&mut s, "cell", kind, 3, 4, seed);
    let (steps, lens) = (4, [4usize, 2]);
    let x = s.insert("x", random(vec![steps * 2, 3], seed, "x"));
    [false, true]
        .into_iter()
        .map(|reverse| {
            worst(&s, |t, p| {
                let masks = StepMasks::new(t, &lens, steps, 4);
                let y = core(cell.run(t, p, p.var(x), steps, 2, &masks, reverse))?;
                project(t, y, seed)
            })
        })
        .fold(0.0, f64::max)
}

fn stacked_encoder(seed: u64) -> f64 {
    let mut s = ParamStore::new();
    let enc = BiRecurrent::new(&mut s, "enc", CellKind::Lstm, 3, 2, 2, seed);
    let x = s.insert("x", random(vec![6, 3], seed, "x"));
    worst(&s, |t, p| {
        let y = core(enc.forward(t, p, p.var(x), 3, &[3, 1]))?;
        project(t, y, seed)
    })
}

fn attention(seed: u64) -> f64 {
    let mut s = ParamStore::new();
    let single = SelfAttention::new(&mut s, "sa", 4, 3, seed);
    let multi = MultiHeadAttention::new(&mut s, "mha", 4, 2, seed);
    let x = s.insert("x", random(vec![6, 4], seed, "x"));
    let a = worst(&s, |t, p| {
        let y = core(single.forward(t, p, p.var(x), 3, &[3, 2]))?;
        project(t, y, seed)
    });
    let b = worst(&s, |t, p| {
        let y = core(multi.forward(t, p, p.var(x), 3, &[2, 3]))?;
        project(t, y, seed)
    });
    a.max(b)
}

fn layer_norm(seed: u64) -> f64 {
    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 5);
    *s.get_mut(ln.gain) = random(vec![5], seed, "gain");
    let x = s.insert("x", random(vec![3, 5], seed, "x"));
    worst(&s, |t, p| {
        let y = core(ln.forward(t, p, p.var(x)))?;
        project(t, y, seed)
    })
}

fn sigmoid_head(seed: u64) -> f64 {
    let mut s = ParamStore::new();
    let head = SigmoidMlp::new(&mut s, "head", &[4, 5, 3, 1], 0.3, seed);
    let x = s.insert("x", random(vec![4, 4], seed, "x"));
    let gold: Vec<f64> = random(vec![4], seed, "gold").data().iter().map(|g| (g + 1.0) / 2.0).collect();
    worst(&s, |t, p| {
        let y = core(head.forward(t, p, p.var(x), &mut ForwardCtx::eval()))?;
        t.bce(y, &gold, &[true, true, false, true])
    })
}

fn toy_instances(seed: u64) -> Vec<Instance> {
    let mut rng = RngStream::new(seed, "toy");
    let words = ["go", "STOP", "now", "a", "emphasis"];
    [3usize, 2]
        .iter()
        .enumerate()
        .map(|(i, &n)| Instance {
            id: format!("t{i}"),
            tokens: (0..n)
                .map(|_| {
                    Token::with_prob(
                        words[rng.below(words.len())],
                        PosTag::ALL[rng.below(17)],
                        rng.uniform(0.05, 0.95),
                    )
                })
                .collect(),
        })
        .collect()
}

fn model_error<M: Labeler<f64>>(model: &M, data: &[Instance]) -> f64 {
    let batch: Vec<&Instance> = data.iter().collect();
    worst(model.store(), |t, p| core(batch_loss(model, t, p, &batch, &mut ForwardCtx::eval())))
}

fn full_recurrent(seed: u64) -> f64 {
    let data = toy_instances(seed);
    [CellKind::Lstm, CellKind::Gru]
        .into_iter()
        .map(|kind| {
            let config = SeqConfig {
                char_dim: 4,
                char_hidden: 4,
                encoder_kind: kind,
                encoder_hidden: 4,
                encoder_layers: 2,
                attn_proj_dim: 4,
                fc_hidden: 6,
                word_dim: 5,
                ..SeqConfig::default()
            };
            let model = SeqLabeler::<f64>::new(config, build_vocab(&data, 1).unwrap(), None, seed).unwrap();
            model_error(&model, &data)
        })
        .fold(0.0, f64::max)
}

fn full_transformer(seed: u64) -> f64 {
    let data = toy_instances(seed);
    [(HeadKind::Mlp, Pooling::First), (HeadKind::BilstmAttn, Pooling::Mean)]
        .into_iter()
        .map(|(head_kind, pooling)| {
            let config = TransformerConfig {
                layers: 2,
                heads: 2,
                d_model: 16,
                d_ff: 8,
                head_dims: (6, 4),
                head_kind,
                pooling,
                head_rnn_hidden: 3,
                head_attn_proj_dim: 4,
                ..TransformerConfig::default()
            };
            let vocab = build_subword_vocab(&data, 12).unwrap();
            let model = TransformerLabeler::<f64>::new(config, vocab, seed).unwrap();
            model_error(&model, &data)
        })
        .fold(0.0, f64::max)
}
