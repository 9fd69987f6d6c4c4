//! Greedy longest-match subword vocabulary with character fallback.

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{CoreError, Result};
use crate::vocab::{frequency_order, Index};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubwordVocab {
    index: Index,
}

impl SubwordVocab {
    pub fn from_entries(entries: Vec<String>) -> Result<Self> {
        if entries.len() < SPECIALS.len() || entries[..SPECIALS.len()] != SPECIALS {
            return Err(CoreError::Config("subword vocabulary must start with the special tokens".into()));
        }
        Ok(Self { index: entries.into() })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        self.index.entries()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.contains(piece).then(|| self.index.get(piece))
    }

    pub fn piece(&self, id: usize) -> &str {
        self.index.entry(id)
    }

    /// Greedy longest match from the left; characters with no entry become `<unk>`.
    pub fn tokenize_word(&self, word: &str) -> Vec<usize> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i + 1 < bounds.len() {
            let hit = (i + 1..bounds.len())
                .rev()
                .find_map(|j| self.id(&word[bounds[i]..bounds[j]]).map(|id| (id, j)));
            match hit {
                Some((id, j)) => {
                    out.push(id);
                    i = j;
                }
                None => {
                    out.push(UNK);
                    i += 1;
                }
            }
        }
        out
    }

    pub fn tokenize(&self, inst: &Instance) -> SubwordTokenization {
        let mut ids = vec![BOS];
        let mut spans = Vec::with_capacity(inst.len());
        for tok in &inst.tokens {
            let pieces = self.tokenize_word(&tok.surface);
            spans.push((ids.len(), pieces.len()));
            ids.extend(pieces);
        }
        ids.push(EOS);
        SubwordTokenization { ids, spans }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordTokenization {
    /// `<bos>`, the subtokens of every word, `<eos>`.
    pub ids: Vec<usize>,
    /// Per word, the position of its first subtoken and its subtoken count.
    pub spans: Vec<(usize, usize)>,
}

impl SubwordTokenization {
    pub fn first_indices(&self) -> Vec<usize> {
        self.spans.iter().map(|&(s, _)| s).collect()
    }
}

/// Specials, then every character seen in training words by frequency,
/// then whole words by frequency until the vocabulary holds `max_vocab`
/// entries. Characters are always kept, so the result may exceed `max_vocab`.
pub fn build_subword_vocab(instances: &[Instance], max_vocab: usize) -> Result<SubwordVocab> {
    if instances.is_empty() {
        return Err(CoreError::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let words = || instances.iter().flat_map(|i| i.tokens.iter().map(|t| t.surface.as_str()));
    let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    entries.extend(frequency_order(words().flat_map(|w| w.chars().map(String::from))).into_iter().map(|(c, _)| c));
    let mut seen: std::collections::HashSet<String> = entries.iter().cloned().collect();
    for (w, _) in frequency_order(words()) {
        if entries.len() >= max_vocab {
            break;
        }
        if seen.insert(w.clone()) {
            entries.push(w);
        }
    }
    SubwordVocab::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PosTag, Token};

    fn inst(words: &[&str]) -> Instance {
        Instance {
            id: "a".into(),
            tokens: words.iter().map(|w| Token::with_prob(*w, PosTag::X, 0.0)).collect(),
        }
    }

    fn vocab(pieces: &[&str]) -> SubwordVocab {
        let mut e: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        e.extend(pieces.iter().map(|s| s.to_string()));
        SubwordVocab::from_entries(e).unwrap()
    }

    #[test]
    fn frequency_listing() {
        let v = build_subword_vocab(&[inst(&["go", "go", "stop"])], 100).unwrap();
        for p in ["go", "stop", "g", "o", "s", "t", "p"] {
            assert!(v.id(p).is_some(), "{p}");
        }
        assert_eq!(&v.entries()[4..], &["o", "g", "s", "t", "p", "go", "stop"]);
    }

    #[test]
    fn character_only_vocab_splits_everything() {
        let v = build_subword_vocab(&[inst(&["go", "go", "stop"])], 9).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v.tokenize_word("go").len(), 2);
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["em", "pha", "sis", "e", "m", "p", "h", "a", "s", "i"]);
        let ids = v.tokenize_word("emphasis");
        let pieces: Vec<&str> = ids.iter().map(|&i| v.piece(i)).collect();
        assert_eq!(pieces, ["em", "pha", "sis"]);
    }

    #[test]
    fn unseen_character_becomes_unk() {
        let v = vocab(&["a", "b"]);
        assert_eq!(v.tokenize_word("aéb"), vec![4, UNK, 5]);
    }

    #[test]
    fn alignment_skips_specials() {
        let v = vocab(&["ab", "a", "b", "c"]);
        let t = v.tokenize(&inst(&["ab", "cab", "c"]));
        assert_eq!(t.ids.first(), Some(&BOS));
        assert_eq!(t.ids.last(), Some(&EOS));
        assert_eq!(t.spans, vec![(1, 1), (2, 2), (4, 1)]);
    }
}
