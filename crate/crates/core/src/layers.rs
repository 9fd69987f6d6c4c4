//! Layers shared by both architectures.
//!
//! Batched activations are matrices whose rows are tokens. Recurrent code
//! uses time-major rows (`t * batch + b`) so one step is a contiguous row
//! block; attention and the heads use batch-major rows (`b * steps + t`).
//! Padded positions are carried as exact zeros through recurrences and are
//! excluded from attention keys, so real-token outputs never depend on
//! how much padding a batch contains.

use std::collections::BTreeMap;

use emph_tensor::init::xavier_uniform;
use emph_tensor::{Bound, Float, ParamStore, RngStream, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Train/eval switch plus one dropout stream per site.
#[derive(Debug)]
pub struct ForwardCtx {
    train: bool,
    seed: u64,
    streams: BTreeMap<String, RngStream>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            seed: 0,
            streams: BTreeMap::new(),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn dropout<T: Float>(&mut self, tape: &mut Tape<T>, x: Var, p: f64, site: &str) -> Result<Var> {
        if !self.train || p == 0.0 {
            // still validates p
            let mut unused = RngStream::new(0, "");
            return Ok(tape.dropout(x, p, false, &mut unused)?);
        }
        let seed = self.seed;
        let rng = self
            .streams
            .entry(site.to_owned())
            .or_insert_with(|| RngStream::new(seed, &format!("dropout/{site}")));
        Ok(tape.dropout(x, p, true, rng)?)
    }
}

pub(crate) fn init_rng(seed: u64, name: &str) -> RngStream {
    RngStream::new(seed, &format!("init/{name}"))
}

/// Row permutation taking time-major rows to batch-major rows.
pub fn time_to_batch_major(steps: usize, batch: usize) -> Vec<usize> {
    let mut rows = Vec::with_capacity(steps * batch);
    for b in 0..batch {
        for t in 0..steps {
            rows.push(t * batch + b);
        }
    }
    rows
}

/// Row permutation taking batch-major rows to time-major rows.
pub fn batch_to_time_major(steps: usize, batch: usize) -> Vec<usize> {
    let mut rows = Vec::with_capacity(steps * batch);
    for t in 0..steps {
        for b in 0..batch {
            rows.push(b * steps + t);
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, bias: bool, seed: u64) -> Self {
        let wname = format!("{name}.w");
        let w = store.insert(&wname, xavier_uniform(in_dim, out_dim, &mut init_rng(seed, &wname)));
        let b = bias.then(|| store.insert(format!("{name}.b"), Tensor::zeros(vec![out_dim])));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        match self.b {
            Some(b) => Ok(tape.add_row(y, p.var(b))?),
            None => Ok(y),
        }
    }

    pub fn param_ids(&self) -> Vec<usize> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// `y = T ⊙ relu(W_H x + b_H) + (1 − T) ⊙ x` with `T = σ(W_T x + b_T)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Highway {
    pub transform: Linear,
    pub gate: Linear,
}

pub const HIGHWAY_GATE_BIAS: f64 = -1.0;

impl Highway {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize, seed: u64) -> Self {
        let transform = Linear::new(store, &format!("{name}.transform"), dim, dim, true, seed);
        let gate = Linear::new(store, &format!("{name}.gate"), dim, dim, true, seed);
        let b = gate.b.expect("gate bias");
        *store.get_mut(b) = Tensor::full(vec![dim], T::of(HIGHWAY_GATE_BIAS));
        Self { transform, gate }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.transform.forward(tape, p, x)?;
        let h = tape.relu(h);
        let g = self.gate.forward(tape, p, x)?;
        let g = tape.sigmoid(g);
        let carry = tape.one_minus(g);
        let transformed = tape.mul(g, h)?;
        let carried = tape.mul(carry, x)?;
        Ok(tape.add(transformed, carried)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// One direction of a recurrent layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recurrent {
    pub kind: CellKind,
    pub hidden: usize,
    pub input: Linear,
    pub w_hh: usize,
    /// GRU keeps a separate recurrent bias because of its reset gate.
    pub b_hh: Option<usize>,
}

/// Per-step `[batch × width]` masks; `None` for steps without padding.
pub struct StepMasks {
    masks: Vec<Option<Var>>,
}

impl StepMasks {
    pub fn new<T: Float>(tape: &mut Tape<T>, lengths: &[usize], steps: usize, width: usize) -> Self {
        let batch = lengths.len();
        let masks = (0..steps)
            .map(|t| {
                if lengths.iter().all(|&l| t < l) {
                    return None;
                }
                let mut data = Vec::with_capacity(batch * width);
                for &l in lengths {
                    let v = if t < l { T::one() } else { T::zero() };
                    data.extend(std::iter::repeat_n(v, width));
                }
                Some(tape.constant(Tensor::new(vec![batch, width], data).expect("mask shape")))
            })
            .collect();
        Self { masks }
    }

    fn apply<T: Float>(&self, tape: &mut Tape<T>, t: usize, x: Var) -> Result<Var> {
        match self.masks[t] {
            Some(m) => Ok(tape.mul(x, m)?),
            None => Ok(x),
        }
    }
}

impl Recurrent {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, kind: CellKind, in_dim: usize, hidden: usize, seed: u64) -> Self {
        let g = kind.gates() * hidden;
        let input = Linear::new(store, &format!("{name}.ih"), in_dim, g, true, seed);
        let wname = format!("{name}.hh.w");
        let w_hh = store.insert(&wname, xavier_uniform(hidden, g, &mut init_rng(seed, &wname)));
        let b_hh = (kind == CellKind::Gru).then(|| store.insert(format!("{name}.hh.b"), Tensor::zeros(vec![g])));
        Self {
            kind,
            hidden,
            input,
            w_hh,
            b_hh,
        }
    }

    /// Runs over time-major input `[steps·batch × in]` and returns the
    /// time-major hidden states `[steps·batch × hidden]`.
    pub fn run<T: Float>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        steps: usize,
        batch: usize,
        masks: &StepMasks,
        reverse: bool,
    ) -> Result<Var> {
        let h = self.hidden;
        let proj = self.input.forward(tape, p, x)?;
        let w_hh = p.var(self.w_hh);
        let mut state = tape.constant(Tensor::zeros(vec![batch, h]));
        let mut cell = tape.constant(Tensor::zeros(vec![batch, h]));
        let mut outputs = vec![state; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let xt = tape.slice_rows(proj, t * batch, batch)?;
            let rec = tape.matmul(state, w_hh)?;
            match self.kind {
                CellKind::Lstm => {
                    let gates = tape.add(xt, rec)?;
                    let i = tape.slice_cols(gates, 0, h)?;
                    let f = tape.slice_cols(gates, h, h)?;
                    let g = tape.slice_cols(gates, 2 * h, h)?;
                    let o = tape.slice_cols(gates, 3 * h, h)?;
                    let i = tape.sigmoid(i);
                    let f = tape.sigmoid(f);
                    let g = tape.tanh(g);
                    let o = tape.sigmoid(o);
                    let keep = tape.mul(f, cell)?;
                    let write = tape.mul(i, g)?;
                    let c = tape.add(keep, write)?;
                    let tc = tape.tanh(c);
                    let hn = tape.mul(o, tc)?;
                    cell = masks.apply(tape, t, c)?;
                    state = masks.apply(tape, t, hn)?;
                }
                CellKind::Gru => {
                    let rec = tape.add_row(rec, p.var(self.b_hh.expect("gru bias")))?;
                    let xr = tape.slice_cols(xt, 0, h)?;
                    let xz = tape.slice_cols(xt, h, h)?;
                    let xn = tape.slice_cols(xt, 2 * h, h)?;
                    let hr = tape.slice_cols(rec, 0, h)?;
                    let hz = tape.slice_cols(rec, h, h)?;
                    let hn = tape.slice_cols(rec, 2 * h, h)?;
                    let r = tape.add(xr, hr)?;
                    let r = tape.sigmoid(r);
                    let z = tape.add(xz, hz)?;
                    let z = tape.sigmoid(z);
                    let rh = tape.mul(r, hn)?;
                    let n = tape.add(xn, rh)?;
                    let n = tape.tanh(n);
                    let diff = tape.sub(state, n)?;
                    let zd = tape.mul(z, diff)?;
                    let hnew = tape.add(n, zd)?;
                    state = masks.apply(tape, t, hnew)?;
                }
            }
            outputs[t] = state;
        }
        Ok(tape.concat_rows(&outputs)?)
    }
}

/// Stacked bidirectional recurrence; each layer concatenates forward and
/// backward states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiRecurrent {
    pub layers: Vec<(Recurrent, Recurrent)>,
}

impl BiRecurrent {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: CellKind,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        seed: u64,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d = if l == 0 { in_dim } else { 2 * hidden };
                (
                    Recurrent::new(store, &format!("{name}.l{l}.fwd"), kind, d, hidden, seed),
                    Recurrent::new(store, &format!("{name}.l{l}.bwd"), kind, d, hidden, seed),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.layers[0].0.hidden
    }

    /// Time-major in, time-major out (`[steps·batch × 2·hidden]`).
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, steps: usize, lengths: &[usize]) -> Result<Var> {
        let batch = lengths.len();
        let masks = StepMasks::new(tape, lengths, steps, self.layers[0].0.hidden);
        let mut h = x;
        for (fwd, bwd) in &self.layers {
            let f = fwd.run(tape, p, h, steps, batch, &masks, false)?;
            let b = bwd.run(tape, p, h, steps, batch, &masks, true)?;
            h = tape.concat_cols(&[f, b])?;
        }
        Ok(h)
    }
}

/// Key mask for one sequence of a padded batch.
fn key_mask(len: usize, steps: usize) -> Vec<bool> {
    (0..steps).map(|t| t < len).collect()
}

/// Single-head scaled dot-product self-attention with a residual connection:
/// `h + W_O · softmax(Q Kᵀ / √p) V`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub proj_dim: usize,
}

impl SelfAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize, proj_dim: usize, seed: u64) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, proj_dim, false, seed),
            k: Linear::new(store, &format!("{name}.k"), dim, proj_dim, false, seed),
            v: Linear::new(store, &format!("{name}.v"), dim, proj_dim, false, seed),
            o: Linear::new(store, &format!("{name}.o"), proj_dim, dim, false, seed),
            proj_dim,
        }
    }

    /// Batch-major in and out.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, h: Var, steps: usize, lengths: &[usize]) -> Result<Var> {
        let q = self.q.forward(tape, p, h)?;
        let k = self.k.forward(tape, p, h)?;
        let v = self.v.forward(tape, p, h)?;
        let scale = T::of(1.0 / (self.proj_dim as f64).sqrt());
        let mut contexts = Vec::with_capacity(lengths.len());
        for (b, &len) in lengths.iter().enumerate() {
            let qb = tape.slice_rows(q, b * steps, steps)?;
            let kb = tape.slice_rows(k, b * steps, steps)?;
            let vb = tape.slice_rows(v, b * steps, steps)?;
            contexts.push(attend(tape, qb, kb, vb, scale, &key_mask(len, steps))?);
        }
        let ctx = tape.concat_rows(&contexts)?;
        let out = self.o.forward(tape, p, ctx)?;
        Ok(tape.add(h, out)?)
    }
}

fn attend<T: Float>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, scale: T, mask: &[bool]) -> Result<Var> {
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, scale);
    let a = tape.masked_softmax(scores, mask)?;
    Ok(tape.matmul(a, v)?)
}

/// Multi-head self-attention without residual (the encoder block adds it).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, seed: u64) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, seed),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, seed),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, seed),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, seed),
            heads,
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, steps: usize, lengths: &[usize]) -> Result<Var> {
        let dim = self.q.out_dim;
        let dh = dim / self.heads;
        let q = self.q.forward(tape, p, x)?;
        let k = self.k.forward(tape, p, x)?;
        let v = self.v.forward(tape, p, x)?;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut seqs = Vec::with_capacity(lengths.len());
        for (b, &len) in lengths.iter().enumerate() {
            let mask = key_mask(len, steps);
            let qb = tape.slice_rows(q, b * steps, steps)?;
            let kb = tape.slice_rows(k, b * steps, steps)?;
            let vb = tape.slice_rows(v, b * steps, steps)?;
            let mut heads = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let qh = tape.slice_cols(qb, hd * dh, dh)?;
                let kh = tape.slice_cols(kb, hd * dh, dh)?;
                let vh = tape.slice_cols(vb, hd * dh, dh)?;
                heads.push(attend(tape, qh, kh, vh, scale, &mask)?);
            }
            seqs.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
        }
        let ctx = tape.concat_rows(&seqs)?;
        self.o.forward(tape, p, ctx)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.insert(format!("{name}.gain"), Tensor::full(vec![dim], T::one())),
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, T::of(LN_EPS))?;
        let n = tape.mul_row(n, p.var(self.gain))?;
        Ok(tape.add_row(n, p.var(self.bias))?)
    }
}

/// Fully connected stack: ReLU and dropout after every layer but the
/// last, which feeds a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmoidMlp {
    pub layers: Vec<Linear>,
    pub dropout_p: f64,
    site: String,
}

impl SigmoidMlp {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dims: &[usize], dropout_p: f64, seed: u64) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.fc{}", i + 1), w[0], w[1], true, seed))
            .collect();
        Self {
            layers,
            dropout_p,
            site: name.to_owned(),
        }
    }

    /// `[rows × in]` to `[rows × 1]` probabilities.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i < last {
                h = tape.relu(h);
                h = ctx.dropout(tape, h, self.dropout_p, &format!("{}.fc{}", self.site, i + 1))?;
            }
        }
        Ok(tape.sigmoid(h))
    }
}

/// Sinusoidal position table `[steps × dim]`.
pub fn sinusoidal_positions<T: Float>(steps: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(steps * dim);
    for pos in 0..steps {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![steps, dim], data).expect("position table shape")
}
