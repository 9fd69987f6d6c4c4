//! Generated corpora with a known emphasis rule: ALL-CAPS tokens are
//! emphasized (gold 1.0), every other token is not (gold 0.0).

use emph_tensor::RngStream;

use crate::data::{Instance, PosTag, Token};

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub instances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub lexicon: usize,
    /// Chance that a token is upper-cased, on top of one forced caps token per sentence.
    pub caps_prob: f64,
    pub id_prefix: String,
}

impl SyntheticSpec {
    pub fn new(instances: usize, id_prefix: &str) -> Self {
        Self {
            instances,
            min_tokens: 4,
            max_tokens: 10,
            lexicon: 300,
            caps_prob: 0.2,
            id_prefix: id_prefix.to_owned(),
        }
    }
}

/// Deterministic pseudo-word list of one to three syllables.
pub fn lexicon(size: usize, seed: u64) -> Vec<String> {
    let mut rng = RngStream::new(seed, "synthetic/lexicon");
    let mut words = Vec::with_capacity(size);
    let mut seen = std::collections::HashSet::new();
    while words.len() < size {
        let syllables = 1 + rng.below(3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS[rng.below(ONSETS.len())], VOWELS[rng.below(VOWELS.len())]))
            .collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn random_pos(rng: &mut RngStream) -> PosTag {
    PosTag::ALL[rng.below(PosTag::ALL.len())]
}

/// Sentences of `min_tokens..=max_tokens` lexicon words with at least one
/// ALL-CAPS token each. The lexicon depends on `lexicon_seed` only, so
/// splits generated with different `seed`s share a vocabulary.
pub fn generate(spec: &SyntheticSpec, lexicon_seed: u64, seed: u64) -> Vec<Instance> {
    let words = lexicon(spec.lexicon, lexicon_seed);
    let mut rng = RngStream::new(seed, &format!("synthetic/{}", spec.id_prefix));
    (0..spec.instances)
        .map(|i| {
            let n = spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1);
            let forced = rng.below(n);
            let tokens = (0..n)
                .map(|t| {
                    let w = &words[rng.below(words.len())];
                    let caps = t == forced || rng.next_f64() < spec.caps_prob;
                    let surface = if caps { w.to_uppercase() } else { w.clone() };
                    Token::with_prob(surface, random_pos(&mut rng), if caps { 1.0 } else { 0.0 })
                })
                .collect();
            Instance {
                id: format!("{}{:05}", spec.id_prefix, i),
                tokens,
            }
        })
        .collect()
}

/// Eight short sentences, each with exactly one emphasized token.
pub fn overfit_set(seed: u64) -> Vec<Instance> {
    let words = lexicon(40, seed);
    let mut rng = RngStream::new(seed, "synthetic/overfit");
    (0..8)
        .map(|i| {
            let n = 4 + rng.below(4);
            let hot = rng.below(n);
            let tokens = (0..n)
                .map(|t| {
                    let w = &words[rng.below(words.len())];
                    let surface = if t == hot { w.to_uppercase() } else { w.clone() };
                    Token::with_prob(surface, random_pos(&mut rng), if t == hot { 1.0 } else { 0.0 })
                })
                .collect();
            Instance {
                id: format!("o{i}"),
                tokens,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_caps(s: &str) -> bool {
        s.chars().all(|c| c.is_ascii_uppercase())
    }

    #[test]
    fn rule_holds_and_lengths_in_range() {
        let d = generate(&SyntheticSpec::new(200, "t"), 1, 2);
        assert_eq!(d.len(), 200);
        for inst in &d {
            assert!((4..=10).contains(&inst.len()));
            assert!(inst.tokens.iter().any(|t| t.gold_prob == 1.0));
            for t in &inst.tokens {
                assert_eq!(is_caps(&t.surface), t.gold_prob == 1.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SyntheticSpec::new(20, "t");
        assert_eq!(generate(&s, 1, 2), generate(&s, 1, 2));
        assert_ne!(generate(&s, 1, 2), generate(&s, 1, 3));
    }

    #[test]
    fn overfit_set_has_unique_maxima() {
        let d = overfit_set(0);
        assert_eq!(d.len(), 8);
        for inst in &d {
            assert_eq!(inst.tokens.iter().filter(|t| t.gold_prob == 1.0).count(), 1);
        }
    }
}
