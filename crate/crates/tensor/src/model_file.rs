//! Binary model container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "EMPH1"
//! tag_len  tag bytes            architecture tag, e.g. "seq_v1"
//! meta_len meta bytes           UTF-8 JSON: configuration and vocabularies
//! param_count
//! per parameter:
//!   name_len name bytes
//!   rank dims[rank]
//!   product(dims) × f32 (little-endian)
//! ```

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"EMPH1";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub tag: String,
    pub meta: String,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl ModelFile {
    pub fn from_store<T: Float>(tag: &str, meta: String, store: &ParamStore<T>) -> Self {
        let params = store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(n, t)| (n.clone(), t.cast::<f32>()))
            .collect();
        Self {
            tag: tag.to_owned(),
            meta,
            params,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_bytes(&mut out, self.tag.as_bytes());
        put_bytes(&mut out, self.meta.as_bytes());
        put_u32(&mut out, self.params.len());
        for (name, t) in &self.params {
            put_bytes(&mut out, name.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a container whose tag must be one of `known_tags`.
    pub fn decode(bytes: &[u8], known_tags: &[&str]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(TensorError::Format("bad magic, not an EMPH1 model".into()));
        }
        let tag = r.string()?;
        if !known_tags.contains(&tag.as_str()) {
            return Err(TensorError::Format(format!("unknown architecture tag {tag:?}")));
        }
        let meta = r.string()?;
        let count = r.u32()?;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            if rank > 8 {
                return Err(TensorError::Format(format!("parameter {name}: rank {rank} too large")));
            }
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| TensorError::Format(format!("parameter {name}: size overflow")))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| TensorError::Format("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| TensorError::Format(format!("parameter {name}: {e}")))?;
            params.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(TensorError::Format("trailing bytes after last parameter".into()));
        }
        Ok(Self { tag, meta, params })
    }

    /// Copies stored values into `store`, requiring identical names, order and shapes.
    pub fn load_into<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(TensorError::Format(format!(
                "file has {} parameters, configuration expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (id, (name, t)) in self.params.iter().enumerate() {
            if store.name(id) != name {
                return Err(TensorError::Format(format!(
                    "parameter {id} is {name:?}, configuration expects {:?}",
                    store.name(id)
                )));
            }
            if store.get(id).shape() != t.shape() {
                return Err(TensorError::Format(format!(
                    "parameter {name}: shape {:?} does not match configuration {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.cast();
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("length fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| TensorError::Format("invalid UTF-8 string".into()))
    }
}
