use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Ordered collection of named parameter tensors.
///
/// Insertion order is the canonical order used by the optimizer state and
/// the model file.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    frozen: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            frozen: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        self.frozen.push(false);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn set_frozen(&mut self, id: usize, frozen: bool) {
        self.frozen[id] = frozen;
    }

    pub fn is_frozen(&self, id: usize) -> bool {
        self.frozen[id]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on the tape. Frozen parameters become
    /// constants and therefore never receive gradients.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        self.bind_inner(tape, true)
    }

    /// Like [`ParamStore::bind`] but differentiates frozen parameters too.
    pub fn bind_all(&self, tape: &mut Tape<T>) -> Bound {
        self.bind_inner(tape, false)
    }

    fn bind_inner(&self, tape: &mut Tape<T>, honor_frozen: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .zip(&self.frozen)
            .map(|(t, &f)| {
                if honor_frozen && f {
                    tape.constant(t.clone())
                } else {
                    tape.leaf(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Replaces values with those of `other`, which must have identical names and shapes.
    pub fn assign(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(TensorError::Contract("parameter sets differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(TensorError::Shape {
                    op: "assign",
                    left: dst.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients in store order; `None` where no gradient flowed.
    pub fn collect<T: Float>(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}
