use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Bound, FusionKind, InteractionKind, ModelConfig, ParamStore};
use crate::autodiff::ops::{
    add, concat_last, dropout, hop_mix, layer_norm, linear, max_pool, mean_pool, multi_head_attention, relu, reshape,
    residual, softmax, weighted_hop_sum,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hops::{gather_batch, HopTensor};
use crate::tensor::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    pub probs: Var,
    /// Hop tokens after the last interaction layer, `b x (L+1) x d`.
    pub hk: Var,
    /// Fused node representations, `b x d`.
    pub z: Var,
}

/// Shared linear encoder over every hop token plus the hop-order embedding.
/// Input dropout is applied first when training.
pub fn encode_hops<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    batch: Var,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    match *tape.shape(batch) {
        [_, l, din] if l == cfg.tokens() && din == cfg.input_dim => {}
        ref s => {
            return Err(Error::Shape(format!(
                "batch {s:?} does not match encoder input [b, {}, {}]",
                cfg.tokens(),
                cfg.input_dim
            )))
        }
    }
    let x = dropout(tape, batch, cfg.dropout, training, rng)?;
    let mut h = linear(tape, x, p.var("encoder.weight")?, Some(p.var("encoder.bias")?))?;
    if cfg.encoder_activation {
        h = relu(tape, h);
    }
    if let Some(e) = p.try_var("order_embedding") {
        h = add(tape, h, e)?;
    }
    Ok(h)
}

/// Residual update of interaction layer `k`, before normalization.
pub(crate) fn interaction_update<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    k: usize,
    h: Var,
) -> Result<Var> {
    let name = |s: &str| format!("layers.{k}.{s}");
    let update = match cfg.interaction_kind {
        InteractionKind::None => return Ok(h),
        InteractionKind::Attention => {
            let att = multi_head_attention(
                tape,
                h,
                p.var(&name("wq"))?,
                p.var(&name("wk"))?,
                p.var(&name("wv"))?,
                cfg.heads,
            )?;
            match p.try_var(&name("wo")) {
                Some(wo) => linear(tape, att, wo, None)?,
                None => att,
            }
        }
        kind => {
            let input = match kind {
                InteractionKind::GcnMean => hop_mix(tape, h, false)?,
                InteractionKind::Sage => {
                    let others = hop_mix(tape, h, true)?;
                    concat_last(tape, h, others)?
                }
                _ => h,
            };
            let y = linear(
                tape,
                input,
                p.var(&name("linear.weight"))?,
                Some(p.var(&name("linear.bias"))?),
            )?;
            relu(tape, y)
        }
    };
    residual(tape, h, update)
}

/// Interaction layer `k`: residual update, layer norm, dropout.
pub fn interaction_layer<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    k: usize,
    h: Var,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if cfg.interaction_kind == InteractionKind::None {
        return Ok(h);
    }
    let y = interaction_update(tape, p, cfg, k, h)?;
    let name = |s: &str| format!("layers.{k}.{s}");
    let y = layer_norm(
        tape,
        y,
        p.var(&name("norm.gamma"))?,
        p.var(&name("norm.beta"))?,
        T::lit(LAYER_NORM_EPS),
    )?;
    dropout(tape, y, cfg.dropout, training, rng)
}

/// Pools `b x (L+1) x d` tokens into `b x d`.
pub fn fuse<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, h: Var) -> Result<Var> {
    match cfg.fusion_kind {
        FusionKind::Mean => mean_pool(tape, h),
        FusionKind::Max => max_pool(tape, h),
        FusionKind::Attention => {
            let (b, l) = (tape.shape(h)[0], tape.shape(h)[1]);
            let scores = linear(tape, h, p.var("fusion.score")?, None)?;
            let scores = reshape(tape, scores, vec![b, l])?;
            let weights = softmax(tape, scores);
            weighted_hop_sum(tape, h, weights)
        }
    }
}

/// Linear head; returns logits and class probabilities.
pub fn predict<T: Real>(tape: &mut Tape<T>, p: &Bound, z: Var) -> Result<(Var, Var)> {
    let logits = linear(tape, z, p.var("head.weight")?, Some(p.var("head.bias")?))?;
    let probs = softmax(tape, logits);
    Ok((logits, probs))
}

/// encode, K interaction layers, fuse, predict. `rng` drives dropout and is
/// untouched in eval mode.
pub fn forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    batch: Var,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    let mut h = encode_hops(tape, p, cfg, batch, training, rng)?;
    for k in 0..cfg.layers() {
        h = interaction_layer(tape, p, cfg, k, h, training, rng)?;
    }
    let z = fuse(tape, p, cfg, h)?;
    let (logits, probs) = predict(tape, p, z)?;
    Ok(Forward {
        logits,
        probs,
        hk: h,
        z,
    })
}

/// Eval-mode outputs for a list of nodes, row-aligned with the ids.
#[derive(Debug, Clone, Default)]
pub struct Inference {
    /// `n x c`
    pub logits: Vec<f32>,
    /// `n x (L+1) d`; empty unless embeddings were requested.
    pub hk: Vec<f32>,
    /// `n x d`; empty unless embeddings were requested.
    pub z: Vec<f32>,
}

/// Eval-mode forward over `ids` in chunks of `batch_size`. Chunks run in
/// parallel and are concatenated in order, so the result does not depend on
/// the chunk size or the thread count.
pub fn infer(
    params: &ParamStore,
    cfg: &ModelConfig,
    hops: &HopTensor,
    ids: &[usize],
    batch_size: usize,
    keep_embeddings: bool,
) -> Result<Inference> {
    if hops.num_hops() != cfg.tokens() || hops.dim() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "hop cache has {} hops of dim {}, model expects {} of dim {}",
            hops.num_hops(),
            hops.dim(),
            cfg.tokens(),
            cfg.input_dim
        )));
    }
    let parts: Vec<Result<Inference>> = ids
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let mut tape = Tape::<f32>::new();
            let p = params.bind(&mut tape, false);
            let x = tape.leaf(gather_batch(hops, chunk)?, false);
            // eval mode never draws from the generator
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = forward(&mut tape, &p, cfg, x, false, &mut rng)?;
            let mut part = Inference {
                logits: tape.value(out.logits).data().to_vec(),
                ..Default::default()
            };
            if keep_embeddings {
                part.hk = tape.value(out.hk).data().to_vec();
                part.z = tape.value(out.z).data().to_vec();
            }
            Ok(part)
        })
        .collect();
    let mut all = Inference::default();
    for part in parts {
        let part = part?;
        all.logits.extend(part.logits);
        all.hk.extend(part.hk);
        all.z.extend(part.z);
    }
    Ok(all)
}
