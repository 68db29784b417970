//! Central finite-difference gradient checking in 64-bit.

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over all entries.
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps`, for every entry of every input.
///
/// `f` receives a fresh tape and one leaf per input (in order) and must
/// return a scalar. It is called `2 * entries + 1` times and has to be
/// deterministic.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        entries_checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst_input = i;
                report.worst_index = j;
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
