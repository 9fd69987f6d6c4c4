//! Pretrained word vectors in the whitespace-separated GloVe text format.

use std::collections::HashMap;
use std::path::Path;

use emph_tensor::rng::stable_hash;
use emph_tensor::{Float, RngStream, Tensor};

use crate::error::{CoreError, Result};
use crate::vocab::{Vocab, PAD};

pub const OOV_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// The stored vector, or a deterministic `U(-0.05, 0.05)` vector derived
    /// from a stable hash of the word.
    pub fn vector(&self, word: &str) -> Vec<f32> {
        if let Some(v) = self.vectors.get(word) {
            return v.clone();
        }
        let mut rng = RngStream::new(stable_hash(word.as_bytes()), "oov");
        (0..self.dim).map(|_| rng.uniform(-OOV_RANGE, OOV_RANGE) as f32).collect()
    }

    /// `[|words| × dim]` initialization matrix in vocabulary order; `<pad>` is zero.
    pub fn matrix<T: Float>(&self, vocab: &Vocab) -> Tensor<T> {
        let mut data = Vec::with_capacity(vocab.words.len() * self.dim);
        for (i, w) in vocab.words.entries().iter().enumerate() {
            if i == PAD {
                data.extend(std::iter::repeat_n(T::zero(), self.dim));
            } else {
                data.extend(self.vector(w).into_iter().map(|x| T::of(x as f64)));
            }
        }
        Tensor::new(vec![vocab.words.len(), self.dim], data).expect("embedding matrix shape")
    }
}

/// Parses embedding text, keeping only words present in `vocab` (all
/// words when `vocab` is `None`). A leading `count dim` header is skipped.
pub fn parse_embeddings(text: &str, vocab: Option<&Vocab>) -> Result<EmbeddingTable> {
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(' ').filter(|f| !f.is_empty()).collect();
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
            continue;
        }
        if fields.len() < 2 {
            return Err(CoreError::parse(line, "expected a word followed by at least one value"));
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f32>().map_err(|_| CoreError::parse(line, format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CoreError::parse(
                    line,
                    format!("vector has {} values, expected {d}", values.len()),
                ))
            }
            _ => {}
        }
        let word = fields[0];
        if vocab.is_none_or(|v| v.words.contains(word)) {
            vectors.insert(word.to_owned(), values);
        }
    }
    let dim = dim.ok_or_else(|| CoreError::Data("embedding file has no vectors".into()))?;
    Ok(EmbeddingTable { dim, vectors })
}

pub fn load_embeddings(path: &Path, vocab: Option<&Vocab>) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_embeddings(&text, vocab).map_err(|e| match e {
        CoreError::Parse { line, msg } => CoreError::Data(format!("{}:{line}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_and_infers_dimension() {
        let t = parse_embeddings("the 0.1 0.2\ncat 0.3 0.4\n", None).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.vector("cat"), vec![0.3, 0.4]);
    }

    #[test]
    fn header_line_is_detected() {
        let t = parse_embeddings("2 3\nthe 0.1 0.2 0.3\ncat 0.3 0.4 0.5\n", None).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn oov_vectors_are_deterministic_and_bounded() {
        let t = parse_embeddings("the 0.1 0.2\n", None).unwrap();
        let a = t.vector("zebra");
        assert_eq!(a, t.vector("zebra"));
        assert_ne!(a, t.vector("zebras"));
        assert!(a.iter().all(|v| v.abs() <= OOV_RANGE as f32));
    }

    #[test]
    fn inconsistent_dimension_names_the_line() {
        match parse_embeddings("the 0.1 0.2\ncat 0.3 0.4 0.5\n", None) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
