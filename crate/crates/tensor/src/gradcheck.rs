//! Central finite-difference verification of tape gradients.
//!
//! Runs at 64-bit precision. A coordinate whose `θ ± h` evaluations take
//! different branches (ReLU sign, BCE clamp) straddles a kink; it is
//! skipped and listed in the report instead of being compared.

use crate::error::{Result, TensorError};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Flat indices of coordinates skipped because they sit on a kink.
    pub skipped: Vec<usize>,
}

impl GradCheckReport {
    fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

fn evaluate<F>(store: &ParamStore<f64>, f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind_all(&mut tape);
    let out = f(&mut tape, &bound)?;
    if tape.value(out).numel() != 1 {
        return Err(TensorError::Contract("grad_check needs a scalar-valued function".into()));
    }
    Ok((tape.value(out).item(), tape.branch_trace().to_vec()))
}

/// Checks the gradient of `f` with respect to every parameter of `store`.
/// Returns one report per parameter, in store order.
pub fn grad_check_params<F>(store: &ParamStore<f64>, f: F) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind_all(&mut tape);
    let out = f(&mut tape, &bound)?;
    let base_trace = tape.branch_trace().to_vec();
    let base_value = tape.value(out).item();
    let mut grads = tape.backward(out)?;
    let analytic = bound.collect(&mut grads);

    let (again, again_trace) = evaluate(store, &f)?;
    if again.to_bits() != base_value.to_bits() || again_trace != base_trace {
        return Err(TensorError::NonDeterministic);
    }

    let mut probe = store.clone();
    let mut reports = Vec::with_capacity(store.len());
    for (id, g) in analytic.iter().enumerate() {
        let numel = store.get(id).numel();
        let zeros;
        let g = match g {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; numel];
                &zeros
            }
        };
        let mut report = GradCheckReport::default();
        for j in 0..numel {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let (plus, trace_plus) = evaluate(&probe, &f)?;
            probe.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let (minus, trace_minus) = evaluate(&probe, &f)?;
            probe.get_mut(id).data_mut()[j] = orig;

            if trace_plus != trace_minus || trace_plus != base_trace {
                report.skipped.push(j);
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.max_rel_err = report.max_rel_err.max(rel_err(g[j], numeric));
            report.checked += 1;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Checks the gradient of a scalar function of a single tensor.
pub fn grad_check<F>(theta: &Tensor<f64>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    store.insert("theta", theta.clone());
    let reports = grad_check_params(&store, |tape, bound| f(tape, bound.var(0)))?;
    Ok(reports.into_iter().next().unwrap_or_default())
}

/// Folds per-parameter reports into one, concatenating nothing but the maxima and counts.
pub fn summarize(reports: &[GradCheckReport]) -> GradCheckReport {
    let mut total = GradCheckReport::default();
    for r in reports {
        total.merge(r);
    }
    total
}
