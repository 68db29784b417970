use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// L2 term added to the gradient when set; decoupled decay otherwise.
    pub coupled: bool,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64, coupled: bool) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            coupled,
        }
    }
}

/// First and second moments per parameter, in store order, plus the step
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of a single scalar at step `t >= 1`.
#[inline]
pub fn adam_update(p: f64, g: f64, m: &mut f64, v: &mut f64, t: u64, c: &AdamConfig) -> f64 {
    let g = if c.coupled { g + c.weight_decay * p } else { g };
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    let mhat = *m / (1.0 - c.beta1.powi(t as i32));
    let vhat = *v / (1.0 - c.beta2.powi(t as i32));
    let decayed = if c.coupled { p } else { p - c.lr * c.weight_decay * p };
    decayed - c.lr * mhat / (vhat.sqrt() + c.eps)
}

/// Updates every parameter from `grads` (store order). A non-finite gradient
/// aborts before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f32>], state: &mut AdamState, c: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if g.len() != p.len() {
            return Err(Error::Shape(format!(
                "gradient of {name} has {} values, expected {}",
                g.len(),
                p.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }
    state.t += 1;
    let t = state.t;
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            *w = adam_update(*w as f64, grads[i][j] as f64, &mut m[j], &mut v[j], t, c) as f32;
        }
    }
    Ok(())
}
