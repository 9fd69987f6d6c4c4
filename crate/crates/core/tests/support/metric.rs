//! Brute-force Match_m used as an oracle for the evaluator.

use emph_core::PredictionSet;
use emph_tensor::RngStream;

/// Repeatedly picks the highest remaining score, earliest index first.
pub fn brute_top(scores: &[u32], m: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut picked = Vec::new();
    for _ in 0..m.min(scores.len()) {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        picked.push(b);
    }
    picked
}

pub fn brute_match(gold: &[Vec<u32>], pred: &[Vec<u32>], m: usize) -> f64 {
    let mut total = 0.0;
    for (g, p) in gold.iter().zip(pred) {
        let gs = brute_top(g, m);
        let ps = brute_top(p, m);
        let shared = gs.iter().filter(|i| ps.contains(i)).count();
        total += shared as f64 / m.min(g.len()) as f64;
    }
    total / gold.len() as f64
}

/// Rows of micro-unit scores keyed by zero-padded position.
pub fn to_set(rows: &[Vec<u32>]) -> PredictionSet {
    let mut set = PredictionSet::new();
    for (i, r) in rows.iter().enumerate() {
        let scores: Vec<f64> = r.iter().map(|&m| m as f64 / 1e6).collect();
        set.insert(format!("{i:05}"), &scores).unwrap();
    }
    set
}

/// `n` rows of 1..=12 uniform scores.
pub fn random_rows(n: usize, seed: u64, label: &str) -> Vec<Vec<u32>> {
    let mut rng = RngStream::new(seed, label);
    (0..n)
        .map(|_| {
            let len = 1 + rng.below(12);
            (0..len).map(|_| rng.below(1_000_001) as u32).collect()
        })
        .collect()
}

pub fn random_rows_like(shape: &[Vec<u32>], seed: u64, label: &str) -> Vec<Vec<u32>> {
    let mut rng = RngStream::new(seed, label);
    shape
        .iter()
        .map(|r| r.iter().map(|_| rng.below(1_000_001) as u32).collect())
        .collect()
}
