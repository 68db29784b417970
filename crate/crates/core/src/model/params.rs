use indexmap::IndexMap;
use rand::Rng;

use super::{FusionKind, InteractionKind, ModelConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Names and shapes of every parameter implied by `cfg`, in storage order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (din, d, c) = (cfg.input_dim, cfg.hidden, cfg.num_classes);
    let mut out = vec![
        ("encoder.weight".to_string(), vec![din, d]),
        ("encoder.bias".to_string(), vec![d]),
    ];
    if cfg.use_order_embedding {
        out.push(("order_embedding".into(), vec![cfg.tokens(), d]));
    }
    for k in 0..cfg.layers() {
        let p = |s: &str| format!("layers.{k}.{s}");
        match cfg.interaction_kind {
            InteractionKind::Attention => {
                for w in ["wq", "wk", "wv"] {
                    out.push((p(w), vec![d, d]));
                }
                if cfg.attention_output_projection {
                    out.push((p("wo"), vec![d, d]));
                }
            }
            InteractionKind::GcnMean | InteractionKind::Mlp => {
                out.push((p("linear.weight"), vec![d, d]));
                out.push((p("linear.bias"), vec![d]));
            }
            InteractionKind::Sage => {
                out.push((p("linear.weight"), vec![2 * d, d]));
                out.push((p("linear.bias"), vec![d]));
            }
            InteractionKind::None => unreachable!("no layers for interaction kind none"),
        }
        out.push((p("norm.gamma"), vec![d]));
        out.push((p("norm.beta"), vec![d]));
    }
    if cfg.fusion_kind == FusionKind::Attention {
        out.push(("fusion.score".into(), vec![d, 1]));
    }
    out.push(("head.weight".into(), vec![d, c]));
    out.push(("head.bias".into(), vec![c]));
    out
}

/// Closed-form parameter count:
/// `d_in d + d + [E] (L+1) d + K (layer + 2d) + [attn fusion] d + d c + c`
/// where `layer` is `3d^2` (attention, `4d^2` with the output projection),
/// `d^2 + d` (gcn_mean, mlp) or `2d^2 + d` (sage).
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (din, d, c) = (cfg.input_dim, cfg.hidden, cfg.num_classes);
    let layer = match cfg.interaction_kind {
        InteractionKind::Attention if cfg.attention_output_projection => 4 * d * d,
        InteractionKind::Attention => 3 * d * d,
        InteractionKind::GcnMean | InteractionKind::Mlp => d * d + d,
        InteractionKind::Sage => 2 * d * d + d,
        InteractionKind::None => 0,
    };
    let order = if cfg.use_order_embedding { cfg.tokens() * d } else { 0 };
    let fusion = if cfg.fusion_kind == FusionKind::Attention { d } else { 0 };
    din * d + d + order + cfg.layers() * (layer + 2 * d) + fusion + d * c + c
}

/// Uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a) as f32).collect()
}

/// Named model parameters in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor<f32>>,
}

impl ParamStore {
    /// Xavier-uniform weight matrices; zero biases, order embedding and
    /// fusion scores; unit layer-norm gain.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = IndexMap::new();
        for (name, shape) in param_shapes(cfg) {
            let value = if name.ends_with("gamma") {
                Tensor::full(shape, 1.0)
            } else if name.ends_with("bias")
                || name.ends_with("beta")
                || name == "order_embedding"
                || name == "fusion.score"
            {
                Tensor::zeros(shape)
            } else {
                let data = xavier_uniform(rng, shape[0], shape[1]);
                Tensor::new(shape, data)?
            };
            params.insert(name, value);
        }
        Ok(Self { params })
    }

    /// Builds a store from named tensors, checking them against `cfg`.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        let store = Self {
            params: named.into_iter().collect(),
        };
        store.check(cfg)?;
        Ok(store)
    }

    /// Errors unless names, order and shapes match `cfg` and all values are
    /// finite.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = param_shapes(cfg);
        if expected.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "config implies {} parameters, store has {}",
                expected.len(),
                self.params.len()
            )));
        }
        for ((name, shape), (have, t)) in expected.iter().zip(&self.params) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::Shape(format!(
                    "expected {name} {shape:?}, found {have} {:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::Numeric(format!("parameter {name} is not finite")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.cast(), requires_grad)))
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on a tape, by name.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds explicit variables, e.g. perturbed copies for gradient checks.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
