//! Word and character vocabularies with reserved `<pad>`/`<unk>` entries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{CoreError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Counts items and returns them by descending frequency, ties broken by
/// first occurrence.
pub(crate) fn frequency_order<I, S>(items: I) -> Vec<(String, usize)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut counts: Vec<(String, usize)> = Vec::new();
    for it in items {
        let s = it.as_ref();
        match slot.get(s) {
            Some(&i) => counts[i].1 += 1,
            None => {
                slot.insert(s.to_owned(), counts.len());
                counts.push((s.to_owned(), 1));
            }
        }
    }
    // stable sort keeps first-occurrence order among equal counts
    counts.sort_by(|a, b| b.1.cmp(&a.1));
    counts
}

/// Ordered list of entries behind a dense index; indices 0 and 1 are
/// `<pad>` and `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Index {
    entries: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl From<Vec<String>> for Index {
    fn from(entries: Vec<String>) -> Self {
        let lookup = entries.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Self { entries, lookup }
    }
}

impl From<Index> for Vec<String> {
    fn from(ix: Index) -> Self {
        ix.entries
    }
}

impl Index {
    fn with_reserved(items: impl IntoIterator<Item = String>) -> Self {
        let mut entries = vec!["<pad>".to_owned(), "<unk>".to_owned()];
        entries.extend(items);
        Self::from(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> usize {
        self.lookup.get(key).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.lookup.contains_key(key)
    }

    pub fn entry(&self, i: usize) -> &str {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: Index,
    pub chars: Index,
    pub min_word_freq: usize,
}

impl Vocab {
    pub fn word(&self, w: &str) -> usize {
        self.words.get(w)
    }

    pub fn char(&self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.chars.get(c.encode_utf8(&mut buf))
    }
}

/// Builds the vocabularies from training data. Words need at least
/// `min_word_freq` occurrences; every character seen in the space-joined
/// instance text is kept.
pub fn build_vocab(instances: &[Instance], min_word_freq: usize) -> Result<Vocab> {
    if instances.is_empty() {
        return Err(CoreError::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let words = frequency_order(instances.iter().flat_map(|i| i.tokens.iter().map(|t| t.surface.as_str())));
    let threshold = min_word_freq.max(1);
    let words = Index::with_reserved(words.into_iter().filter(|(_, c)| *c >= threshold).map(|(w, _)| w));

    let texts: Vec<String> = instances.iter().map(Instance::text).collect();
    let chars = frequency_order(texts.iter().flat_map(|t| t.chars().map(String::from)));
    let chars = Index::with_reserved(chars.into_iter().map(|(c, _)| c));

    Ok(Vocab {
        words,
        chars,
        min_word_freq: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PosTag, Token};

    fn inst(id: &str, words: &[&str]) -> Instance {
        Instance {
            id: id.into(),
            tokens: words.iter().map(|w| Token::with_prob(*w, PosTag::X, 0.0)).collect(),
        }
    }

    #[test]
    fn threshold_filters_rare_words() {
        let v = build_vocab(&[inst("a", &["a", "a", "b"])], 2).unwrap();
        assert_eq!(v.words.entries(), &["<pad>", "<unk>", "a"]);
        assert_eq!(v.word("b"), UNK);
        assert_eq!(v.word("zzz"), UNK);
    }

    #[test]
    fn threshold_one_keeps_everything_in_frequency_order() {
        let v = build_vocab(&[inst("a", &["c", "b", "b", "a", "c", "b"])], 1).unwrap();
        assert_eq!(v.words.entries(), &["<pad>", "<unk>", "b", "c", "a"]);
        assert!(v.chars.contains(" "));
        assert_eq!(v.char('q'), UNK);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab(&[], 1).is_err());
    }
}
