//! Match_m: overlap between the top-m gold tokens and the top-m predicted
//! tokens, normalized by `min(m, |x|)` and averaged over instances, for
//! m = 1..4. The leaderboard score is the plain mean of the four values.

use std::fmt;

use crate::error::{CoreError, Result};
use crate::predictions::PredictionSet;

pub const MAX_M: usize = 4;

/// Indices of the `min(m, n)` highest scores; equal scores favour the lower index.
/// Returned in ascending index order.
pub fn top_m_set<S: PartialOrd + Copy>(scores: &[S], m: usize) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(CoreError::Data("top_m_set on an empty score list".into()));
    }
    if m == 0 {
        return Err(CoreError::Data("top_m_set needs m >= 1".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(m.min(scores.len()));
    order.sort_unstable();
    Ok(order)
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    // both ascending
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn check_alignment(gold: &PredictionSet, pred: &PredictionSet) -> Result<()> {
    if gold.is_empty() {
        return Err(CoreError::Data("empty evaluation set".into()));
    }
    for (id, g) in gold.iter() {
        let p = pred.micros(id).ok_or_else(|| CoreError::align(id, "missing from predictions"))?;
        if p.len() != g.len() {
            return Err(CoreError::align(id, format!("{} predicted scores for {} tokens", p.len(), g.len())));
        }
    }
    if let Some(extra) = pred.ids().find(|id| gold.micros(id).is_none()) {
        return Err(CoreError::align(extra, "not present in gold"));
    }
    Ok(())
}

/// Mean over instances of `|S_m ∩ Ŝ_m| / min(m, |x|)`.
pub fn match_m(gold: &PredictionSet, pred: &PredictionSet, m: usize) -> Result<f64> {
    check_alignment(gold, pred)?;
    let mut total = 0.0;
    for (id, g) in gold.iter() {
        let p = pred.micros(id).expect("aligned");
        let gs = top_m_set(g, m)?;
        let ps = top_m_set(p, m)?;
        total += intersection_size(&gs, &ps) as f64 / m.min(g.len()) as f64;
    }
    Ok(total / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchReport {
    /// `matches[m - 1]` is Match_m.
    pub matches: [f64; MAX_M],
    pub mean: f64,
    pub size: usize,
}

impl MatchReport {
    pub fn match_at(&self, m: usize) -> f64 {
        self.matches[m - 1]
    }

    /// Tab-separated header and value line, six decimals.
    pub fn table(&self) -> String {
        let v = &self.matches;
        format!(
            "Match_1\tMatch_2\tMatch_3\tMatch_4\tMean\n{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            v[0], v[1], v[2], v[3], self.mean
        )
    }

    /// One `key=value` line per quantity.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.matches.iter().enumerate() {
            out.push_str(&format!("match_{}={v:.6}\n", i + 1));
        }
        out.push_str(&format!("mean={:.6}\ninstances={}\n", self.mean, self.size));
        out
    }
}

impl fmt::Display for MatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

pub fn evaluate(gold: &PredictionSet, pred: &PredictionSet) -> Result<MatchReport> {
    let mut matches = [0.0; MAX_M];
    for (m, slot) in matches.iter_mut().enumerate() {
        *slot = match_m(gold, pred, m + 1)?;
    }
    Ok(MatchReport {
        matches,
        mean: (matches[0] + matches[1] + matches[2] + matches[3]) / 4.0,
        size: gold.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[(&str, &[f64])]) -> PredictionSet {
        let mut p = PredictionSet::new();
        for (id, s) in rows {
            p.insert(*id, s).unwrap();
        }
        p
    }

    #[test]
    fn top_m_examples() {
        assert_eq!(top_m_set(&[0.9, 0.1, 0.5], 2).unwrap(), vec![0, 2]);
        assert_eq!(top_m_set(&[0.5, 0.5, 0.1], 1).unwrap(), vec![0]);
        assert_eq!(top_m_set(&[0.2, 0.3], 4).unwrap(), vec![0, 1]);
        assert!(top_m_set::<f64>(&[], 1).is_err());
    }

    #[test]
    fn hand_derived_instance() {
        let gold = set(&[("x", &[0.9, 0.1, 0.5, 0.3, 0.7])]);
        let pred = set(&[("x", &[0.8, 0.2, 0.4, 0.6, 0.1])]);
        let r = evaluate(&gold, &pred).unwrap();
        assert_eq!(r.matches[0], 1.0);
        assert_eq!(r.matches[1], 0.5);
        assert!((r.matches[2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.matches[3], 0.75);
        assert!((r.mean - 0.729167).abs() < 1e-6);
    }

    #[test]
    fn short_instance_uses_min_denominator() {
        let gold = set(&[("x", &[0.1, 0.9])]);
        let pred = set(&[("x", &[0.7, 0.3])]);
        assert_eq!(match_m(&gold, &pred, 3).unwrap(), 1.0);
    }

    #[test]
    fn self_evaluation_and_disjoint_sets() {
        let gold = set(&[("a", &[0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.0, 0.05]), ("b", &[0.2, 0.4])]);
        assert_eq!(evaluate(&gold, &gold).unwrap().mean, 1.0);

        let g = set(&[("a", &[1.0, 0.9, 0.8, 0.7, 0.0, 0.0, 0.0, 0.0])]);
        let p = set(&[("a", &[0.0, 0.0, 0.0, 0.0, 1.0, 0.9, 0.8, 0.7])]);
        assert_eq!(evaluate(&g, &p).unwrap().mean, 0.0);
    }

    #[test]
    fn misaligned_sets_name_the_instance() {
        let gold = set(&[("a", &[0.1, 0.2])]);
        let pred = set(&[("a", &[0.1, 0.2, 0.3])]);
        match evaluate(&gold, &pred) {
            Err(CoreError::Alignment { id, .. }) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        let pred = set(&[("b", &[0.1, 0.2])]);
        assert!(evaluate(&gold, &pred).is_err());
    }
}
