//! Wengert tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value and the
//! handles of its inputs. Nodes are appended after their inputs, so the
//! tape is always in topological order and [`Tape::backward`] is a single
//! reverse sweep. A tape is consumed by its backward pass; gradients for a
//! new step require a freshly recorded tape.

use crate::error::{Result, TensorError};
use crate::float::{stable_sigmoid, Float};
use crate::kernels;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

/// Lower clamp applied to predictions inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    PoolRows { x: Var, groups: Vec<Vec<usize>> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Bce { pred: Var, gold: Vec<T>, mask: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    branches: Vec<bool>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dims2<T: Float>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(TensorError::Invalid {
            op,
            msg: format!("expected a matrix, got shape {other:?}"),
        }),
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            branches: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Outcomes of every data-dependent branch taken so far (ReLU sign,
    /// BCE clamp). Two evaluations with equal traces lie on the same smooth
    /// piece of the function.
    pub fn branch_trace(&self) -> &[bool] {
        &self.branches
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input, typically a parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = dims2("matmul", self.value(a))?;
        let (k2, c) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); r * c];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2("transpose", self.value(a))?;
        let out = kernels::transpose(self.value(a).data(), r, c);
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape {
                op,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&mut self, op: &'static str, x: Var, row: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (r, c) = dims2(op, self.value(x))?;
        let vr = self.value(row);
        if vr.numel() != c || vr.rank() > 2 || (vr.rank() == 2 && vr.shape()[0] != 1) {
            return Err(TensorError::Shape {
                op,
                left: self.shape(x).to_vec(),
                right: vr.shape().to_vec(),
            });
        }
        let rd = vr.data();
        let mut data = Vec::with_capacity(r * c);
        for xr in self.value(x).data().chunks_exact(c) {
            data.extend(xr.iter().zip(rd).map(|(&a, &b)| f(a, b)));
        }
        Tensor::new(vec![r, c], data)
    }

    /// Adds a `[c]` vector to every row of an `[r×c]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.row_broadcast("add_row", x, bias, |a, b| a + b)?;
        Ok(self.push(value, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Multiplies every row of an `[r×c]` matrix by a `[c]` vector.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let value = self.row_broadcast("mul_row", x, gain, |a, b| a * b)?;
        Ok(self.push(value, Op::MulRow(x, gain), &[x, gain]))
    }

    /// `alpha * x + beta`, elementwise.
    pub fn affine(&mut self, x: Var, alpha: T, beta: T) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| alpha * v + beta).collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Affine(x, alpha), &[x])
    }

    pub fn scale(&mut self, x: Var, alpha: T) -> Var {
        self.affine(x, alpha, T::zero())
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f(v)).collect();
        Tensor::new(vx.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, stable_sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        let signs: Vec<bool> = self.value(x).data().iter().map(|&v| v > T::zero()).collect();
        self.branches.extend(signs);
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Tanh => self.tanh(x),
            Activation::Relu => self.relu(x),
        }
    }

    /// Row-wise softmax over the columns where `mask` is true. Masked
    /// columns are exactly zero. A mask without any true entry is an error.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = dims2("masked_softmax", self.value(x))?;
        if mask.len() != c {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                left: self.shape(x).to_vec(),
                right: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::DegenerateMask { op: "masked_softmax" });
        }
        let mut out = vec![T::zero(); r * c];
        for (row, orow) in self.value(x).data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for ((o, &v), &m) in orow.iter_mut().zip(row).zip(mask) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(value, Op::MaskedSoftmax(x), &[x]))
    }

    /// Normalizes each row to zero mean and unit (biased) variance.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let (r, c) = dims2("layer_norm", self.value(x))?;
        let n = T::of(c as f64);
        let mut out = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.value(x).data().chunks_exact(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|&v| (v - mean) * s));
            inv_std.push(s);
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(value, Op::LayerNorm { x, inv_std }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_cols", self.value(x))?;
        if len == 0 || start + len > c {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of range for width {c}", start + len),
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for row in self.value(x).data().chunks_exact(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_rows", self.value(x))?;
        if len == 0 || start + len > r {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of range for {r} rows", start + len),
            });
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(vec![len, c], out)?;
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    /// Output row `i` is the mean of the input rows listed in `groups[i]`.
    pub fn pool_rows(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let (r, c) = dims2("pool_rows", self.value(x))?;
        if groups.is_empty() {
            return Err(TensorError::Invalid {
                op: "pool_rows",
                msg: "no output rows".into(),
            });
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); groups.len() * c];
        for (g, orow) in groups.iter().zip(out.chunks_exact_mut(c)) {
            if g.is_empty() {
                return Err(TensorError::Invalid {
                    op: "pool_rows",
                    msg: "empty row group".into(),
                });
            }
            for &i in g {
                if i >= r {
                    return Err(TensorError::Invalid {
                        op: "pool_rows",
                        msg: format!("row index {i} out of range for {r} rows"),
                    });
                }
                for (o, &v) in orow.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *o += v;
                }
            }
            if g.len() > 1 {
                let n = T::of(g.len() as f64);
                for o in orow.iter_mut() {
                    *o /= n;
                }
            }
        }
        let value = Tensor::new(vec![groups.len(), c], out)?;
        Ok(self.push(value, Op::PoolRows { x, groups }, &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.pool_rows(x, rows.iter().map(|&i| vec![i]).collect())
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            msg: "nothing to concatenate".into(),
        })?;
        let (r, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let (rv, cv) = dims2("concat_cols", self.value(v))?;
            if rv != r {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(v).to_vec(),
                });
            }
            widths.push(cv);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![r, total], out)?;
        Ok(self.push(value, Op::ConcatCols(xs.to_vec()), xs))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(TensorError::Invalid {
            op: "concat_rows",
            msg: "nothing to concatenate".into(),
        })?;
        let (_, c) = dims2("concat_rows", self.value(first))?;
        let mut rows = 0;
        for &v in xs {
            let (rv, cv) = dims2("concat_rows", self.value(v))?;
            if cv != c {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: self.shape(v).to_vec(),
                });
            }
            rows += rv;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &v in xs {
            out.extend_from_slice(self.value(v).data());
        }
        let value = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(value, Op::ConcatRows(xs.to_vec()), xs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean binary cross-entropy over unmasked entries. Predictions are
    /// clamped to `[1e-7, 1 - 1e-7]` before the logarithm; the gradient is
    /// zero where the clamp is active.
    pub fn bce(&mut self, pred: Var, gold: &[T], mask: &[bool]) -> Result<Var> {
        let n = self.value(pred).numel();
        if gold.len() != n || mask.len() != n {
            return Err(TensorError::Shape {
                op: "bce",
                left: self.shape(pred).to_vec(),
                right: vec![gold.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::DegenerateMask { op: "bce" });
        }
        let lo = T::of(BCE_EPS);
        let hi = T::one() - lo;
        let mut total = T::zero();
        let mut clamped = Vec::with_capacity(count);
        for ((&p, &g), &m) in self.value(pred).data().iter().zip(gold).zip(mask) {
            if !m {
                continue;
            }
            clamped.push(p < lo || p > hi);
            // NaN falls through the comparisons and poisons the loss
            let p = if p < lo { lo } else if p > hi { hi } else { p };
            total -= g * p.ln() + (T::one() - g) * (T::one() - p).ln();
        }
        self.branches.extend(clamped);
        let loss = total / T::of(count as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                gold: gold.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            &[pred],
        ))
    }

    /// Inverted dropout: in training each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Outside of
    /// training, or with `p == 0`, the input is returned unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let shape = self.shape(x).to_vec();
        let numel = self.value(x).numel();
        let mask: Vec<T> = (0..numel)
            .map(|_| if rng.next_f64() < p { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar root. The tape can be swept only once.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(TensorError::Contract(
                "backward already ran on this tape; record a new one".into(),
            ));
        }
        if self.value(root).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (r, k) = (va.shape()[0], va.shape()[1]);
                let c = vb.shape()[1];
                if self.wants(*a) {
                    kernels::matmul_a_bt_acc(g, vb.data(), slot(grads, *a, r * k), r, k, c);
                }
                if self.wants(*b) {
                    kernels::matmul_at_b_acc(va.data(), g, slot(grads, *b, k * c), r, k, c);
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    let gt = kernels::transpose(g, r, c);
                    add_into(slot(grads, *a, gt.len()), &gt);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    for (d, &gv) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let vb = self.value(*b).data();
                    for ((d, &gv), &bv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(vb) {
                        *d += gv * bv;
                    }
                }
                if self.wants(*b) {
                    let va = self.value(*a).data();
                    for ((d, &gv), &av) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(va) {
                        *d += gv * av;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.wants(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.wants(*bias) {
                    let c = self.value(*bias).numel();
                    let d = slot(grads, *bias, c);
                    for row in g.chunks_exact(c) {
                        add_into(d, row);
                    }
                }
            }
            Op::MulRow(x, gain) => {
                let vg = self.value(*gain).data();
                let c = vg.len();
                if self.wants(*x) {
                    let d = slot(grads, *x, g.len());
                    for (drow, grow) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        for ((dv, &gv), &w) in drow.iter_mut().zip(grow).zip(vg) {
                            *dv += gv * w;
                        }
                    }
                }
                if self.wants(*gain) {
                    let vx = self.value(*x).data();
                    let d = slot(grads, *gain, c);
                    for (xrow, grow) in vx.chunks_exact(c).zip(g.chunks_exact(c)) {
                        for ((dv, &gv), &xv) in d.iter_mut().zip(grow).zip(xrow) {
                            *dv += gv * xv;
                        }
                    }
                }
            }
            Op::Affine(x, alpha) => {
                if self.wants(*x) {
                    for (d, &gv) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += *alpha * gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    for ((d, &gv), &yv) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    for ((d, &gv), &yv) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                        *d += gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let vx = self.value(*x).data();
                    for ((d, &gv), &xv) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(vx) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                if self.wants(*x) {
                    let c = node.value.shape()[1];
                    let d = slot(grads, *x, g.len());
                    for ((drow, grow), yrow) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.wants(*x) {
                    let c = node.value.shape()[1];
                    let n = T::of(c as f64);
                    let d = slot(grads, *x, g.len());
                    for (((drow, grow), yrow), &s) in d
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(y.chunks_exact(c))
                        .zip(inv_std)
                    {
                        let gmean = grow.iter().copied().sum::<T>() / n;
                        let gy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += s * (gv - gmean - yv * gy);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let c = self.value(*x).shape()[1];
                    let len = node.value.shape()[1];
                    let d = slot(grads, *x, self.value(*x).numel());
                    for (drow, grow) in d.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        add_into(&mut drow[*start..*start + len], grow);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if self.wants(*x) {
                    let c = self.value(*x).shape()[1];
                    let d = slot(grads, *x, self.value(*x).numel());
                    add_into(&mut d[start * c..start * c + g.len()], g);
                }
            }
            Op::PoolRows { x, groups } => {
                if self.wants(*x) {
                    let c = self.value(*x).shape()[1];
                    let d = slot(grads, *x, self.value(*x).numel());
                    for (grp, grow) in groups.iter().zip(g.chunks_exact(c)) {
                        let w = T::one() / T::of(grp.len() as f64);
                        for &r in grp {
                            for (dv, &gv) in d[r * c..(r + 1) * c].iter_mut().zip(grow) {
                                *dv += if grp.len() == 1 { gv } else { gv * w };
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &v in xs {
                    let w = self.value(v).shape()[1];
                    if self.wants(v) {
                        let d = slot(grads, v, self.value(v).numel());
                        for (drow, grow) in d.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let n = self.value(v).numel();
                    if self.wants(v) {
                        add_into(slot(grads, v, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let n = self.value(*x).numel();
                    for d in slot(grads, *x, n).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if self.wants(*x) {
                    let n = self.value(*x).numel();
                    let share = g[0] / T::of(n as f64);
                    for d in slot(grads, *x, n).iter_mut() {
                        *d += share;
                    }
                }
            }
            Op::Bce {
                pred,
                gold,
                mask,
                count,
            } => {
                if self.wants(*pred) {
                    let lo = T::of(BCE_EPS);
                    let hi = T::one() - lo;
                    let scale = g[0] / T::of(*count as f64);
                    let vp = self.value(*pred).data();
                    let d = slot(grads, *pred, vp.len());
                    for (((dv, &p), &gv), &m) in d.iter_mut().zip(vp).zip(gold).zip(mask) {
                        if m && p >= lo && p <= hi {
                            *dv += scale * ((T::one() - gv) / (T::one() - p) - gv / p);
                        }
                    }
                }
            }
        }
    }
}

fn slot<T: Float>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut t = Tape::<f64>::new();
        let i2 = t.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = t.constant(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let ib = t.matmul(i2, b).unwrap();
        assert_eq!(t.value(ib).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(mat(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let ab = t.matmul(a, b).unwrap();
        assert_eq!(t.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn activation_closed_forms() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(vec![3], &[0.0, 3f64.ln(), -2.5]).unwrap());
        let s = t.sigmoid(x);
        let r = t.relu(x);
        assert_eq!(t.value(s).data()[0], 0.5);
        assert!((t.value(s).data()[1] - 0.75).abs() < 1e-12);
        assert_eq!(t.value(r).data()[2], 0.0);
    }

    #[test]
    fn sigmoid_is_stable_for_extreme_inputs() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::from_f64(vec![2], &[-1000.0, 1000.0]).unwrap());
        let s = t.sigmoid(x);
        assert!(t.value(s).is_finite());
        assert_eq!(t.value(s).data(), &[0.0, 1.0]);
    }

    #[test]
    fn masked_softmax_cases() {
        let mut t = Tape::<f64>::new();
        let one = t.constant(Tensor::zeros(vec![1, 1]));
        let a = t.masked_softmax(one, &[true]).unwrap();
        assert_eq!(t.value(a).data(), &[1.0]);

        let z = t.constant(Tensor::zeros(vec![1, 3]));
        let a = t.masked_softmax(z, &[true; 3]).unwrap();
        for &v in t.value(a).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let x = t.constant(Tensor::from_f64(vec![1, 3], &[5.0, 5.0, 1e9]).unwrap());
        let a = t.masked_softmax(x, &[true, true, false]).unwrap();
        assert_eq!(t.value(a).data(), &[0.5, 0.5, 0.0]);

        assert!(matches!(
            t.masked_softmax(x, &[false; 3]),
            Err(TensorError::DegenerateMask { .. })
        ));
        let nan = t.constant(Tensor::from_f64(vec![1], &[f64::NAN]).unwrap());
        let l = t.bce(nan, &[1.0], &[true]).unwrap();
        assert!(t.value(l).item().is_nan());
    }

    #[test]
    fn bce_closed_forms() {
        let mut t = Tape::<f64>::new();
        let p = t.constant(Tensor::from_f64(vec![3], &[1.0, 0.5, 0.9]).unwrap());
        let l = t.bce(p, &[1.0, 1.0, 0.0], &[true, false, false]).unwrap();
        assert!(t.value(l).item() <= 1e-6);
        let l = t.bce(p, &[1.0, 1.0, 0.0], &[false, true, false]).unwrap();
        assert!((t.value(l).item() - 0.693147).abs() < 1e-6);
        let l = t.bce(p, &[1.0, 1.0, 0.0], &[false, false, true]).unwrap();
        assert!((t.value(l).item() - 2.302585).abs() < 1e-6);
        assert!(matches!(
            t.bce(p, &[1.0, 1.0, 0.0], &[false; 3]),
            Err(TensorError::DegenerateMask { .. })
        ));
    }

    #[test]
    fn backward_linear_sigmoid_and_fanout() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(vec![2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap());
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);

        let mut t = Tape::<f64>::new();
        let w = t.leaf(Tensor::zeros(vec![1, 1]));
        let x = t.constant(Tensor::full(vec![1, 1], 1.0));
        let wx = t.matmul(w, x).unwrap();
        let s = t.sigmoid(wx);
        let loss = t.sum(s);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 0.25);

        let mut t = Tape::<f64>::new();
        let y = t.leaf(Tensor::scalar(3.0));
        let yy = t.add(y, y).unwrap();
        let g = t.backward(yy).unwrap();
        assert_eq!(g.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut t = Tape::<f64>::new();
        let y = t.leaf(Tensor::scalar(3.0));
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(TensorError::Contract(_))));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::<f64>::new();
        let y = t.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(t.backward(y), Err(TensorError::Contract(_))));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = RngStream::new(7, "dropout/test");
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(vec![4, 4], 2.0));
        assert_eq!(t.dropout(x, 0.3, false, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert!(matches!(t.dropout(x, 1.0, true, &mut rng), Err(TensorError::Config(_))));
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let mut rng = RngStream::new(42, "dropout/lln");
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(vec![100_000], 1.0));
        let y = t.dropout(x, 0.3, true, &mut rng).unwrap();
        let mean = t.value(y).data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(vec![2, 4], &[1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 2.0, 11.0]).unwrap());
        let y = t.layer_norm(x, 1e-5).unwrap();
        for row in t.value(y).data().chunks(4) {
            let m = row.iter().sum::<f64>() / 4.0;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
