//! Mini-batch training with Adam and early stopping on validation accuracy,
//! evaluation, and the multi-split protocol.
//!
//! Training only reads the hop tensor and the labels; the graph is used once,
//! by the pre-computation in [`run_protocol`].

mod adam;
mod config;

use std::borrow::Cow;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use config::TrainConfig;

use crate::autodiff::ops::{add, concat_rows, scale};
use crate::autodiff::Tape;
use crate::dataset::{load_dataset, read_dataset_splits, Dataset};
use crate::error::{Error, Result};
use crate::graph::{make_splits, normalize, LabeledNodes, Split, SplitRatios};
use crate::hops::{gather_batch, precompute_hops, HopTensor};
use crate::model::{forward, infer, Checkpoint, ModelConfig, ParamStore};
use crate::objectives::{barlow_loss, cross_entropy, scl_loss, total_loss, SslKind};
use crate::tensor::argmax;

/// Independent generator streams derived from the master seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Bench = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Fills `input_dim` and `num_classes` from the data when they are zero and
/// checks them otherwise.
pub fn resolve_model(model: &ModelConfig, hops: &HopTensor, labels: &LabeledNodes) -> Result<ModelConfig> {
    let mut m = model.clone();
    if m.input_dim == 0 {
        m.input_dim = hops.dim();
    }
    if m.num_classes == 0 {
        m.num_classes = labels.num_classes();
    }
    if m.input_dim != hops.dim() {
        return Err(Error::Shape(format!(
            "model expects input dim {}, hop cache has {}",
            m.input_dim,
            hops.dim()
        )));
    }
    if m.num_classes < labels.num_classes() {
        return Err(Error::Shape(format!(
            "model has {} classes, labels use {}",
            m.num_classes,
            labels.num_classes()
        )));
    }
    if hops.num_hops() < m.tokens() {
        return Err(Error::Shape(format!(
            "model needs {} hops, cache holds {}",
            m.tokens(),
            hops.num_hops()
        )));
    }
    m.validate()?;
    Ok(m)
}

/// The cache prefix with exactly the hops the model consumes.
pub fn hops_for<'a>(hops: &'a HopTensor, model: &ModelConfig) -> Result<Cow<'a, HopTensor>> {
    if hops.num_hops() == model.tokens() {
        Ok(Cow::Borrowed(hops))
    } else {
        Ok(Cow::Owned(hops.truncate(model.tokens())?))
    }
}

fn labels_of(labels: &LabeledNodes, ids: &[usize]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&i| {
            if i >= labels.len() {
                return Err(Error::InvalidArgument(format!(
                    "node id {i} out of range for {} nodes",
                    labels.len()
                )));
            }
            labels
                .get(i)
                .ok_or_else(|| Error::Data(format!("node {i} has no label")))
        })
        .collect()
}

/// Accuracy, per-class accuracy and mean cross-entropy on a node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub count: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the node set.
    pub per_class: Vec<Option<f64>>,
    pub mean_ce: f64,
}

pub fn evaluate_params(
    params: &ParamStore,
    cfg: &ModelConfig,
    hops: &HopTensor,
    ids: &[usize],
    labels: &LabeledNodes,
    batch_size: usize,
) -> Result<Evaluation> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty node set".into()));
    }
    let y = labels_of(labels, ids)?;
    let out = infer(params, cfg, hops, ids, batch_size, false)?;
    let c = cfg.num_classes;
    let mut hits = vec![0usize; c];
    let mut totals = vec![0usize; c];
    let mut ce = 0.0f64;
    for (row, &label) in out.logits.chunks_exact(c).zip(&y) {
        totals[label] += 1;
        if argmax(row) == label {
            hits[label] += 1;
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        ce += lse - row[label] as f64;
    }
    Ok(Evaluation {
        count: ids.len(),
        accuracy: hits.iter().sum::<usize>() as f64 / ids.len() as f64,
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        mean_ce: ce / ids.len() as f64,
    })
}

/// Eval-mode metrics of a checkpoint; the hop cache may hold more hops than
/// the model uses.
pub fn evaluate(
    ckpt: &Checkpoint,
    hops: &HopTensor,
    ids: &[usize],
    labels: &LabeledNodes,
    batch_size: usize,
) -> Result<Evaluation> {
    let hops = hops_for(hops, &ckpt.config)?;
    evaluate_params(&ckpt.params, &ckpt.config, &hops, ids, labels, batch_size)
}

/// Wall-clock seconds per phase, accumulated over steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub steps: usize,
    pub gather: f64,
    pub forward: f64,
    pub backward: f64,
    pub step: f64,
    pub eval: f64,
}

impl PhaseTimings {
    pub fn step_seconds(&self) -> f64 {
        self.gather + self.forward + self.backward + self.step
    }
}

/// Losses of one optimization step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub ce: f64,
    pub ssl: f64,
}

/// Parameters, optimizer state and generators of one run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    hops: Cow<'a, HopTensor>,
    labels: &'a LabeledNodes,
    params: ParamStore,
    adam: AdamState,
    adam_cfg: AdamConfig,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    tape: Tape<f32>,
    pub timings: PhaseTimings,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, hops: &'a HopTensor, labels: &'a LabeledNodes) -> Result<Self> {
        cfg.validate()?;
        if labels.len() != hops.num_nodes() {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes in the hop cache",
                labels.len(),
                hops.num_nodes()
            )));
        }
        let mut cfg = cfg.clone();
        cfg.model = resolve_model(&cfg.model, hops, labels)?;
        let hops = hops_for(hops, &cfg.model)?;
        let params = ParamStore::init(&cfg.model, &mut stream_rng(cfg.seed, Stream::Init))?;
        Ok(Self {
            adam: AdamState::new(&params),
            adam_cfg: AdamConfig::new(cfg.lr, cfg.weight_decay, cfg.coupled_weight_decay),
            shuffle_rng: stream_rng(cfg.seed, Stream::Shuffle),
            dropout_rng: stream_rng(cfg.seed, Stream::Dropout),
            tape: Tape::new(),
            timings: PhaseTimings::default(),
            params,
            hops,
            labels,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn hops(&self) -> &HopTensor {
        &self.hops
    }

    /// Largest tape footprint of any step so far, in bytes.
    pub fn peak_tape_bytes(&self) -> usize {
        self.tape.peak_bytes()
    }

    /// One Adam step on the nodes `ids`. With an auxiliary loss the batch
    /// runs through two training-mode forwards with independent dropout
    /// masks; cross-entropy is averaged over both views.
    pub fn step(&mut self, ids: &[usize]) -> Result<StepLoss> {
        let y = labels_of(self.labels, ids)?;
        let t0 = Instant::now();
        let batch = gather_batch(&self.hops, ids)?;
        let t1 = Instant::now();

        let tape = &mut self.tape;
        tape.reset();
        let p = self.params.bind(tape, true);
        let x = tape.leaf(batch, false);
        let model = &self.cfg.model;
        let loss_cfg = &self.cfg.loss;
        let a = forward(tape, &p, model, x, true, &mut self.dropout_rng)?;
        let (ce, ssl) = match loss_cfg.ssl_kind {
            SslKind::None => (cross_entropy(tape, a.logits, &y, None)?, None),
            kind => {
                let b = forward(tape, &p, model, x, true, &mut self.dropout_rng)?;
                let ce_a = cross_entropy(tape, a.logits, &y, None)?;
                let ce_b = cross_entropy(tape, b.logits, &y, None)?;
                let sum = add(tape, ce_a, ce_b)?;
                let ce = scale(tape, sum, 0.5);
                let ssl = if kind == SslKind::Barlow {
                    barlow_loss(tape, a.hk, b.hk, loss_cfg.alpha)?
                } else {
                    let z = concat_rows(tape, a.z, b.z)?;
                    let yy: Vec<usize> = y.iter().chain(&y).copied().collect();
                    scl_loss(tape, z, &yy, loss_cfg.tau, loss_cfg.scl_normalize)?
                };
                (ce, Some(ssl))
            }
        };
        let total = total_loss(tape, ce, ssl, loss_cfg.lambda)?;
        let loss = StepLoss {
            total: tape.value(total).item() as f64,
            ce: tape.value(ce).item() as f64,
            ssl: ssl.map_or(0.0, |s| tape.value(s).item() as f64),
        };
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {} (ce {}, ssl {})",
                loss.total, loss.ce, loss.ssl
            )));
        }
        let t2 = Instant::now();
        tape.backward(total)?;
        let grads: Vec<Vec<f32>> = p
            .iter()
            .zip(self.params.iter())
            .map(|((_, v), (_, t))| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f32]>::to_vec))
            .collect();
        let t3 = Instant::now();
        adam_step(&mut self.params, &grads, &mut self.adam, &self.adam_cfg)?;
        let t4 = Instant::now();

        self.timings.steps += 1;
        self.timings.gather += (t1 - t0).as_secs_f64();
        self.timings.forward += (t2 - t1).as_secs_f64();
        self.timings.backward += (t3 - t2).as_secs_f64();
        self.timings.step += (t4 - t3).as_secs_f64();
        Ok(loss)
    }

    /// Shuffles `train` and runs one step per batch. A trailing batch of a
    /// single node is merged into the previous one so batch statistics stay
    /// defined.
    pub fn epoch(&mut self, train: &[usize]) -> Result<StepLoss> {
        let mut order = train.to_vec();
        order.shuffle(&mut self.shuffle_rng);
        let b = self.cfg.batch_size;
        let mut bounds: Vec<(usize, usize)> = (0..order.len())
            .step_by(b)
            .map(|s| (s, (s + b).min(order.len())))
            .collect();
        if bounds.len() > 1 && bounds.last().is_some_and(|&(s, e)| e - s < 2) {
            let (_, end) = bounds.pop().unwrap();
            bounds.last_mut().unwrap().1 = end;
        }
        let mut acc = StepLoss::default();
        for (i, &(s, e)) in bounds.iter().enumerate() {
            let l = self.step(&order[s..e]).map_err(|err| match err {
                Error::Numeric(m) => Error::Numeric(format!("batch {i}: {m}")),
                other => other,
            })?;
            let w = (e - s) as f64 / order.len() as f64;
            acc.total += w * l.total;
            acc.ce += w * l.ce;
            acc.ssl += w * l.ssl;
        }
        Ok(acc)
    }

    pub fn evaluate(&mut self, ids: &[usize]) -> Result<Evaluation> {
        let t = Instant::now();
        let e = evaluate_params(
            &self.params,
            &self.cfg.model,
            &self.hops,
            ids,
            self.labels,
            self.cfg.eval_batch_size,
        );
        self.timings.eval += t.elapsed().as_secs_f64();
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    pub ssl_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

/// Outcome of one training run. Contains no timings, so identical inputs
/// give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_accuracy: f64,
    /// Computed once, from the best-validation parameters.
    pub test: Evaluation,
    /// Largest autodiff tape footprint of a training step, in bytes.
    pub peak_tape_bytes: usize,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub phases: PhaseTimings,
    pub total: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
    pub timings: RunTimings,
}

fn with_pool<R: Send>(single_thread: bool, f: impl FnOnce() -> R + Send) -> R {
    if !single_thread {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Trains on `split.train`, keeps the parameters with the best validation
/// accuracy (ties go to the lower validation loss) and stops after
/// `patience` epochs without improvement.
pub fn train(hops: &HopTensor, labels: &LabeledNodes, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument(
            "validation and test splits must be non-empty".into(),
        ));
    }
    with_pool(cfg.determinism, || train_inner(hops, labels, split, cfg))
}

fn train_inner(hops: &HopTensor, labels: &LabeledNodes, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut tr = Trainer::new(cfg, hops, labels)?;
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, f64, ParamStore)> = None;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let loss = tr.epoch(&split.train).map_err(|err| match err {
            Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, {m}")),
            other => other,
        })?;
        let val = tr.evaluate(&split.val)?;
        log::debug!("epoch {epoch}: loss {:.4} val acc {:.4}", loss.total, val.accuracy);
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss.total,
            train_ce: loss.ce,
            ssl_loss: loss.ssl,
            val_accuracy: val.accuracy,
            val_loss: val.mean_ce,
        });
        let improved = match &best {
            None => true,
            Some((_, acc, ce, _)) => val.accuracy > *acc || (val.accuracy == *acc && val.mean_ce < *ce),
        };
        if improved {
            best = Some((epoch, val.accuracy, val.mean_ce, tr.params().clone()));
        } else if epoch - best.as_ref().unwrap().0 >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_accuracy, best_val_loss, params) = best.expect("at least one epoch");
    let model = tr.config().model.clone();
    let batch = cfg.eval_batch_size;
    let t = Instant::now();
    let test = evaluate_params(&params, &model, tr.hops(), &split.test, labels, batch)?;
    let train_acc = evaluate_params(&params, &model, tr.hops(), &split.train, labels, batch)?.accuracy;
    tr.timings.eval += t.elapsed().as_secs_f64();

    let report = RunReport {
        config: tr.config().clone(),
        num_params: params.num_scalars(),
        epochs,
        best_epoch,
        best_val_accuracy,
        best_val_loss,
        stopped_early,
        train_accuracy: train_acc,
        test,
        peak_tape_bytes: tr.peak_tape_bytes(),
    };
    let timings = RunTimings {
        phases: tr.timings.clone(),
        total: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { config: model, params },
        report,
        timings,
    })
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub dataset: String,
    pub num_splits: usize,
    /// Test accuracy per split.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<RunReport>,
}

impl ProtocolReport {
    pub fn row(&self) -> TableRow {
        TableRow {
            name: self.dataset.clone(),
            mean: self.mean,
            std: self.std,
        }
    }
}

pub struct ProtocolOutcome {
    pub report: ProtocolReport,
    pub checkpoints: Vec<Checkpoint>,
    pub timings: Vec<RunTimings>,
    pub precompute_seconds: f64,
}

/// Shipped splits when the dataset has them, otherwise `cfg.num_splits`
/// seeded 48/32/20 splits of the labeled nodes.
pub fn protocol_splits(dir: &Path, ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<Split>> {
    let mut shipped = read_dataset_splits(dir)?;
    if !shipped.is_empty() {
        if shipped.len() < cfg.num_splits {
            log::warn!(
                "{} ships {} splits, {} requested",
                dir.display(),
                shipped.len(),
                cfg.num_splits
            );
        }
        shipped.truncate(cfg.num_splits);
        for s in &shipped {
            s.validate(ds.num_nodes())?;
        }
        return Ok(shipped);
    }
    let labeled = ds.labels.labeled_ids();
    let splits = make_splits(labeled.len(), SplitRatios::default(), cfg.seed, cfg.num_splits)?;
    Ok(splits.iter().map(|s| s.remap(&labeled)).collect())
}

/// Trains one model per split on a shared hop cache. Split `i` uses seed
/// `cfg.seed + i`.
pub fn run_splits(
    name: &str,
    hops: &HopTensor,
    labels: &LabeledNodes,
    splits: &[Split],
    cfg: &TrainConfig,
) -> Result<ProtocolOutcome> {
    let mut runs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut timings = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        let out = train(hops, labels, split, &c)?;
        log::info!("{name} split {i}: test accuracy {:.4}", out.report.test.accuracy);
        runs.push(out.report);
        checkpoints.push(out.checkpoint);
        timings.push(out.timings);
    }
    let accuracies: Vec<f64> = runs.iter().map(|r| r.test.accuracy).collect();
    let (mean, std) = mean_std(&accuracies);
    Ok(ProtocolOutcome {
        report: ProtocolReport {
            dataset: name.to_string(),
            num_splits: splits.len(),
            accuracies,
            mean,
            std,
            runs,
        },
        checkpoints,
        timings,
        precompute_seconds: 0.0,
    })
}

/// Normalized propagation matrix and hop tensor for a dataset.
pub fn precompute_for(ds: &Dataset, cfg: &TrainConfig, hops: usize) -> Result<HopTensor> {
    let a = normalize(&ds.graph, cfg.norm, cfg.self_loops);
    precompute_hops(&a, &ds.features, hops)
}

/// Loads a dataset, pre-computes hops once and trains on every split.
pub fn run_protocol(data_dir: impl AsRef<Path>, cfg: &TrainConfig) -> Result<ProtocolOutcome> {
    let dir = data_dir.as_ref();
    cfg.validate()?;
    let ds = load_dataset(dir)?;
    let splits = protocol_splits(dir, &ds, cfg)?;
    let t = Instant::now();
    let hops = precompute_for(&ds, cfg, cfg.model.hops)?;
    let pre = t.elapsed().as_secs_f64();
    let mut out = run_splits(&ds.name, &hops, &ds.labels, &splits, cfg)?;
    out.precompute_seconds = pre;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionKind, InteractionKind};
    use rand::Rng;

    /// Two Gaussian blobs on a single hop (L = 0).
    fn separable(n: usize, seed: u64) -> (HopTensor, LabeledNodes) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u32;
            let s = if y == 1 { 1.0 } else { -1.0 };
            data.push(s * 1.5 + rng.gen_range(-1.0f32..1.0));
            data.push(rng.gen_range(-1.0f32..1.0));
            labels.push(y);
        }
        (
            HopTensor::new(n, 1, 2, data).unwrap(),
            LabeledNodes::new(labels).unwrap(),
        )
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            lr: 0.05,
            max_epochs: 200,
            patience: 200,
            batch_size: 16,
            model: ModelConfig {
                hops: 0,
                hidden: 8,
                interaction_kind: InteractionKind::None,
                dropout: 0.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn split(n: usize) -> Split {
        Split {
            train: (0..n / 2).collect(),
            val: (n / 2..3 * n / 4).collect(),
            test: (3 * n / 4..n).collect(),
        }
    }

    #[test]
    fn linear_toy_reaches_full_train_accuracy() {
        let (hops, labels) = separable(64, 1);
        let out = train(&hops, &labels, &split(64), &small_cfg()).unwrap();
        let best_acc = out.report.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
        assert_eq!(out.report.best_val_accuracy, best_acc);
        assert_eq!(out.report.epochs[out.report.best_epoch].val_accuracy, best_acc);
        let full = evaluate(&out.checkpoint, &hops, &split(64).train, &labels, 7).unwrap();
        assert_eq!(full.accuracy, out.report.train_accuracy);
        let last = out.report.epochs.last().unwrap();
        assert!(out.report.train_accuracy >= 0.95, "{}", out.report.train_accuracy);
        assert!(last.train_loss < out.report.epochs[0].train_loss);
    }

    #[test]
    fn same_seed_same_report() {
        let (hops, labels) = separable(40, 2);
        let mut cfg = small_cfg();
        cfg.max_epochs = 20;
        cfg.patience = 5;
        cfg.model.dropout = 0.3;
        cfg.batch_size = 7;
        let a = train(&hops, &labels, &split(40), &cfg).unwrap();
        let b = train(&hops, &labels, &split(40), &cfg).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        cfg.seed = 9;
        let c = train(&hops, &labels, &split(40), &cfg).unwrap();
        assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
    }

    #[test]
    fn barlow_views_coincide_without_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 24;
        let data: Vec<f32> = (0..n * 3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hops = HopTensor::new(n, 3, 2, data).unwrap();
        let labels = LabeledNodes::new((0..n as u32).map(|i| i % 3).collect()).unwrap();
        let mut cfg = small_cfg();
        cfg.max_epochs = 5;
        cfg.patience = 5;
        cfg.batch_size = 8;
        cfg.model.hops = 2;
        cfg.model.interaction_kind = InteractionKind::Attention;
        cfg.loss.ssl_kind = SslKind::Barlow;
        cfg.loss.alpha = 0.0;
        let out = train(&hops, &labels, &split(n), &cfg).unwrap();
        // alpha = 0 leaves only the invariance term, which vanishes for equal views
        for e in &out.report.epochs {
            assert!(e.ssl_loss < 1e-3, "{e:?}");
        }
        cfg.model.dropout = 0.5;
        let out = train(&hops, &labels, &split(n), &cfg).unwrap();
        assert!(out.report.epochs[0].ssl_loss > 1e-2);
    }

    #[test]
    fn every_variant_and_ssl_kind_trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20;
        let data: Vec<f32> = (0..n * 3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hops = HopTensor::new(n, 3, 2, data).unwrap();
        let labels = LabeledNodes::new((0..n as u32).map(|i| i % 2).collect()).unwrap();
        for kind in InteractionKind::ALL {
            for ssl in [SslKind::None, SslKind::Barlow, SslKind::Scl] {
                let mut cfg = small_cfg();
                cfg.max_epochs = 3;
                cfg.patience = 3;
                cfg.model.hops = 2;
                cfg.model.hidden = 4;
                cfg.model.heads = 2;
                cfg.model.dropout = 0.2;
                cfg.model.fusion_kind = FusionKind::Attention;
                cfg.model.interaction_kind = kind;
                cfg.loss.ssl_kind = ssl;
                cfg.loss.lambda = 0.1;
                let out = train(&hops, &labels, &split(n), &cfg).unwrap();
                assert_eq!(out.report.epochs.len(), 3);
                assert!(out.report.epochs.iter().all(|e| e.train_loss.is_finite()));
            }
        }
    }

    #[test]
    fn errors() {
        let (hops, labels) = separable(16, 5);
        let cfg = small_cfg();
        let mut s = split(16);
        s.train.clear();
        assert!(matches!(
            train(&hops, &labels, &s, &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let mut s = split(16);
        s.test.push(99);
        assert!(train(&hops, &labels, &s, &cfg).is_err());
        let mut c = cfg.clone();
        c.model.input_dim = 5;
        assert!(matches!(train(&hops, &labels, &split(16), &c), Err(Error::Shape(_))));
        let mut c = cfg.clone();
        c.model.hops = 3;
        assert!(train(&hops, &labels, &split(16), &c).is_err());
        let mut c = cfg;
        c.lr = 1e30;
        c.max_epochs = 50;
        c.patience = 50;
        let err = train(&hops, &labels, &split(16), &c).err().expect("diverges");
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn evaluation_metrics() {
        let (hops, labels) = separable(32, 6);
        let out = train(&hops, &labels, &split(32), &small_cfg()).unwrap();
        let ids: Vec<usize> = (0..32).collect();
        let a = evaluate(&out.checkpoint, &hops, &ids, &labels, 1).unwrap();
        let b = evaluate(&out.checkpoint, &hops, &ids, &labels, 32).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_class.len(), 2);
        assert!(evaluate(&out.checkpoint, &hops, &[], &labels, 4).is_err());
        assert!(evaluate(&out.checkpoint, &hops, &[32], &labels, 4).is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.8]), (0.8, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
