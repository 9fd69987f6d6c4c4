//! Score averaging across independently trained members.

use emph_tensor::Float;
use rayon::prelude::*;

use crate::data::Instance;
use crate::embeddings::EmbeddingTable;
use crate::error::{CoreError, Result};
use crate::eval::{evaluate, MatchReport};
use crate::model::{predict, ArchConfig};
use crate::predictions::PredictionSet;
use crate::train::{train_arch, TrainConfig, TrainLog};

/// Per-token arithmetic mean of the input sets, rounded half up at six
/// decimals. Exact integer arithmetic makes it order-independent.
pub fn ensemble_average(sets: &[PredictionSet]) -> Result<PredictionSet> {
    let (first, rest) = sets
        .split_first()
        .ok_or_else(|| CoreError::Data("ensemble needs at least one prediction set".into()))?;
    for other in rest {
        if let Some(id) = other.ids().find(|id| first.micros(id).is_none()) {
            return Err(CoreError::align(id, "not present in every member"));
        }
    }
    let k = sets.len() as u64;
    let mut out = PredictionSet::new();
    for (id, base) in first.iter() {
        let mut sums: Vec<u64> = base.iter().map(|&m| m as u64).collect();
        for other in rest {
            let s = other.micros(id).ok_or_else(|| CoreError::align(id, "missing from a member"))?;
            if s.len() != sums.len() {
                return Err(CoreError::align(id, format!("members disagree on token count ({} vs {})", sums.len(), s.len())));
            }
            for (acc, &m) in sums.iter_mut().zip(s) {
                *acc += m as u64;
            }
        }
        out.insert_micros(id.to_owned(), sums.into_iter().map(|s| ((2 * s + k) / (2 * k)) as u32).collect());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberSpec {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct MemberResult {
    pub predictions: PredictionSet,
    pub report: MatchReport,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub members: Vec<MemberResult>,
    pub average: PredictionSet,
    pub report: MatchReport,
}

impl EnsembleRun {
    /// Median of the member dev means (lower middle for even counts).
    pub fn median_member_mean(&self) -> f64 {
        let mut means: Vec<f64> = self.members.iter().map(|m| m.report.mean).collect();
        means.sort_by(f64::total_cmp);
        means[(means.len() - 1) / 2]
    }
}

/// Trains every member in parallel, then averages their dev predictions.
pub fn run_ensemble<T: Float>(
    specs: &[MemberSpec],
    train_set: &[Instance],
    dev_set: &[Instance],
    embeddings: Option<&EmbeddingTable>,
) -> Result<EnsembleRun> {
    let members = specs
        .par_iter()
        .map(|spec| {
            let (model, log) = train_arch::<T>(&spec.arch, train_set, dev_set, embeddings, &spec.train)?;
            Ok((predict(&model, dev_set, spec.train.batch_size)?, log))
        })
        .collect::<Result<Vec<_>>>()?;
    combine(members, dev_set)
}

/// Evaluates members and their average against the gold of `dev_set`.
pub fn combine(members: Vec<(PredictionSet, TrainLog)>, dev_set: &[Instance]) -> Result<EnsembleRun> {
    let gold = PredictionSet::from_gold(dev_set)?;
    let members = members
        .into_iter()
        .map(|(predictions, log)| {
            Ok(MemberResult {
                report: evaluate(&gold, &predictions)?,
                predictions,
                log,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<PredictionSet> = members.iter().map(|m| m.predictions.clone()).collect();
    let average = ensemble_average(&sets)?;
    let report = evaluate(&gold, &average)?;
    Ok(EnsembleRun { members, average, report })
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
    fn copies_average_to_themselves() {
        let a = set(&[("x", &[0.123457, 0.999999, 0.0]), ("y", &[0.5])]);
        assert_eq!(ensemble_average(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn arithmetic_mean() {
        let a = set(&[("x", &[0.2])]);
        let b = set(&[("x", &[0.4])]);
        assert_eq!(ensemble_average(&[a, b]).unwrap().scores("x").unwrap(), vec![0.3]);
    }

    #[test]
    fn token_count_mismatch_names_the_id() {
        let a = set(&[("x", &[0.2])]);
        let b = set(&[("x", &[0.4, 0.1])]);
        match ensemble_average(&[a, b]) {
            Err(CoreError::Alignment { id, .. }) => assert_eq!(id, "x"),
            other => panic!("{other:?}"),
        }
        assert!(ensemble_average(&[]).is_err());
    }
}
