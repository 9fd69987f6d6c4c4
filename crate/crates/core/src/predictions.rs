//! Per-token emphasis scores keyed by instance id.
//!
//! Scores are held at the resolution of the prediction file, six decimal
//! places, as integer millionths. Reading a file back therefore yields the
//! exact set that was written, and rankings computed in memory agree with
//! rankings computed from files.
//!
//! File layout: header `id\ttoken\tscore`, then one row per token sorted by
//! `(id, token_index)` with the score printed to six decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::Instance;
use crate::error::{CoreError, Result};

pub const SCALE: u64 = 1_000_000;
pub const HEADER: &str = "id\ttoken\tscore";

/// Rounds a score in `[0, 1]` to millionths, halves rounding up.
pub fn quantize(score: f64) -> Result<u32> {
    if !score.is_finite() || !(0.0..=1.0).contains(&score) {
        return Err(CoreError::Data(format!("score {score} outside [0, 1]")));
    }
    Ok((score * SCALE as f64 + 0.5).floor().min(SCALE as f64) as u32)
}

pub fn format_score(micros: u32) -> String {
    format!("{}.{:06}", micros as u64 / SCALE, micros as u64 % SCALE)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredictionSet {
    scores: BTreeMap<String, Vec<u32>>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, scores: &[f64]) -> Result<()> {
        let id = id.into();
        if scores.is_empty() {
            return Err(CoreError::align(&id, "no scores"));
        }
        let q = scores.iter().map(|&s| quantize(s)).collect::<Result<Vec<_>>>()?;
        self.scores.insert(id, q);
        Ok(())
    }

    pub(crate) fn insert_micros(&mut self, id: String, micros: Vec<u32>) {
        self.scores.insert(id, micros);
    }

    /// Gold probabilities of a dataset viewed as a prediction set.
    pub fn from_gold(instances: &[Instance]) -> Result<Self> {
        let mut set = Self::new();
        for inst in instances {
            set.insert(inst.id.clone(), &inst.gold())?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn micros(&self, id: &str) -> Option<&[u32]> {
        self.scores.get(id).map(Vec::as_slice)
    }

    pub fn scores(&self, id: &str) -> Option<Vec<f64>> {
        self.micros(id)
            .map(|m| m.iter().map(|&x| x as f64 / SCALE as f64).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u32])> {
        self.scores.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Checks that every instance has a score list of matching length.
    pub fn check_aligned(&self, instances: &[Instance]) -> Result<()> {
        for inst in instances {
            match self.scores.get(&inst.id) {
                None => return Err(CoreError::align(&inst.id, "missing from predictions")),
                Some(s) if s.len() != inst.len() => {
                    return Err(CoreError::align(
                        &inst.id,
                        format!("{} scores for {} tokens", s.len(), inst.len()),
                    ))
                }
                _ => {}
            }
        }
        if self.scores.len() != instances.len() {
            return Err(CoreError::Data(format!(
                "{} prediction entries for {} instances",
                self.scores.len(),
                instances.len()
            )));
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (id, scores) in &self.scores {
            for (i, &s) in scores.iter().enumerate() {
                let _ = writeln!(out, "{id}\t{i}\t{}", format_score(s));
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(CoreError::parse(1, format!("expected header {HEADER:?}"))),
        }
        let mut rows: BTreeMap<String, BTreeMap<usize, u32>> = BTreeMap::new();
        for (i, raw) in lines {
            let line = i + 1;
            if raw.is_empty() {
                continue;
            }
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() != 3 {
                return Err(CoreError::parse(line, format!("expected 3 fields, found {}", f.len())));
            }
            let idx: usize = f[1]
                .parse()
                .map_err(|_| CoreError::parse(line, format!("bad token index {:?}", f[1])))?;
            let score: f64 = f[2]
                .parse()
                .map_err(|_| CoreError::parse(line, format!("bad score {:?}", f[2])))?;
            let q = quantize(score).map_err(|e| CoreError::parse(line, e.to_string()))?;
            if rows.entry(f[0].to_owned()).or_default().insert(idx, q).is_some() {
                return Err(CoreError::parse(line, format!("duplicate token {idx} for {:?}", f[0])));
            }
        }
        let mut set = Self::new();
        for (id, toks) in rows {
            for (expect, &got) in toks.keys().enumerate() {
                if expect != got {
                    return Err(CoreError::align(&id, format!("missing token index {expect}")));
                }
            }
            set.scores.insert(id, toks.into_values().collect());
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| CoreError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_tsv(&text).map_err(|e| match e {
            CoreError::Parse { line, msg } => CoreError::Data(format!("{}:{line}: {msg}", path.display())),
            other => other,
        })
    }
}
