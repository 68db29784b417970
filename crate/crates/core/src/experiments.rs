//! Experiment drivers behind the CLI: ablation suites, hop sweeps, step
//! benchmarks and embedding export. Every result type serializes to JSON and
//! renders as an aligned text table from the same data.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, LabeledNodes, SparseGraph, Split};
use crate::hops::HopTensor;
use crate::model::{infer, Checkpoint, FusionKind, InteractionKind};
use crate::train::{hops_for, precompute_for, run_splits, stream_rng, PhaseTimings, Stream, TrainConfig, Trainer};

/// Aligned plain-text table; the first column is left-aligned, the rest
/// right-aligned.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Order,
    Fusion,
    Interaction,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "order" => Ok(Suite::Order),
            "fusion" => Ok(Suite::Fusion),
            "interaction" => Ok(Suite::Interaction),
            _ => Err(Error::InvalidArgument(format!("unknown ablation suite {s:?}"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Order => "order",
            Suite::Fusion => "fusion",
            Suite::Interaction => "interaction",
        })
    }
}

/// Named configurations of a suite, derived from `cfg`.
pub fn suite_variants(suite: Suite, cfg: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    match suite {
        Suite::Order => vec![
            (
                "with order embedding".into(),
                with(&|c| c.model.use_order_embedding = true),
            ),
            (
                "without order embedding".into(),
                with(&|c| c.model.use_order_embedding = false),
            ),
        ],
        Suite::Fusion => FusionKind::ALL
            .iter()
            .map(|&k| (k.to_string(), with(&|c| c.model.fusion_kind = k)))
            .collect(),
        Suite::Interaction => InteractionKind::ALL
            .iter()
            .map(|&k| (k.to_string(), with(&|c| c.model.interaction_kind = k)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    /// `mean` minus the mean of the unmodified configuration.
    pub delta: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub suite: Suite,
    pub baseline_mean: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    pct(r.mean),
                    pct(r.std),
                    format!("{:+.2}", 100.0 * r.delta),
                ]
            })
            .collect();
        format!(
            "{} ablation on {} (accuracy %)\n{}",
            self.suite,
            self.dataset,
            render_table(&["variant", "mean", "std", "delta"], &rows)
        )
    }
}

fn map_maybe_parallel<T: Sync, R: Send>(
    items: &[T],
    parallel: bool,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if parallel {
        items.par_iter().map(&f).collect()
    } else {
        items.iter().map(&f).collect()
    }
}

/// Runs every variant of `suite` over `splits` on one hop cache.
pub fn ablate(
    name: &str,
    hops: &HopTensor,
    labels: &LabeledNodes,
    splits: &[Split],
    cfg: &TrainConfig,
    suite: Suite,
    parallel: bool,
) -> Result<AblationTable> {
    let variants = suite_variants(suite, cfg);
    let mut jobs: Vec<(String, TrainConfig)> = vec![("baseline".into(), cfg.clone())];
    jobs.extend(variants.iter().filter(|(_, c)| c != cfg).cloned());
    let results = map_maybe_parallel(&jobs, parallel, |(label, c)| {
        log::info!("{suite} ablation: {label}");
        Ok((c.clone(), run_splits(name, hops, labels, splits, c)?.report))
    })?;
    let baseline_mean = results[0].1.mean;
    let rows = variants
        .iter()
        .map(|(variant, c)| {
            let r = &results.iter().find(|(rc, _)| rc == c).expect("every variant ran").1;
            AblationRow {
                variant: variant.clone(),
                mean: r.mean,
                std: r.std,
                delta: r.mean - baseline_mean,
                accuracies: r.accuracies.clone(),
            }
        })
        .collect();
    Ok(AblationTable {
        dataset: name.to_string(),
        suite,
        baseline_mean,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hops: usize,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub dataset: String,
    pub interaction_kind: InteractionKind,
    pub rows: Vec<SweepRow>,
    /// Best minus worst mean accuracy.
    pub spread: f64,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.hops.to_string(), pct(r.mean), pct(r.std)])
            .collect();
        format!(
            "accuracy vs hops on {} ({}), spread {:.2} points\n{}",
            self.dataset,
            self.interaction_kind,
            100.0 * self.spread,
            render_table(&["hops", "mean", "std"], &rows)
        )
    }
}

/// Pre-computes hops once at the largest `L` in `hop_list` and trains one
/// model per `L` on prefixes of that cache.
pub fn sweep_hops(
    ds: &Dataset,
    splits: &[Split],
    cfg: &TrainConfig,
    hop_list: &[usize],
    parallel: bool,
) -> Result<SweepTable> {
    let max = *hop_list
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("empty hop list".into()))?;
    let hops = precompute_for(ds, cfg, max)?;
    sweep_on_cache(&ds.name, &hops, &ds.labels, splits, cfg, hop_list, parallel)
}

pub fn sweep_on_cache(
    name: &str,
    hops: &HopTensor,
    labels: &LabeledNodes,
    splits: &[Split],
    cfg: &TrainConfig,
    hop_list: &[usize],
    parallel: bool,
) -> Result<SweepTable> {
    let rows = map_maybe_parallel(hop_list, parallel, |&l| {
        let mut c = cfg.clone();
        c.model.hops = l;
        let r = run_splits(name, hops, labels, splits, &c)?.report;
        Ok(SweepRow {
            hops: l,
            mean: r.mean,
            std: r.std,
            accuracies: r.accuracies,
        })
    })?;
    let best = rows.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max);
    let worst = rows.iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
    Ok(SweepTable {
        dataset: name.to_string(),
        interaction_kind: cfg.model.interaction_kind,
        rows,
        spread: best - worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub steps: usize,
    pub batch_size: usize,
    pub hops: usize,
    pub steps_per_sec: f64,
    pub mean_step_seconds: f64,
    /// Mean seconds per step for each phase.
    pub phases: PhaseTimings,
    /// Peak heap during the timed steps; `None` without the counting
    /// allocator.
    pub peak_heap_bytes: Option<usize>,
    pub peak_tape_bytes: usize,
    pub hop_cache_bytes: usize,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let ms = |s: f64| format!("{:.3}", 1e3 * s);
        let rows = vec![
            vec!["gather".into(), ms(self.phases.gather)],
            vec!["forward".into(), ms(self.phases.forward)],
            vec!["backward".into(), ms(self.phases.backward)],
            vec!["step".into(), ms(self.phases.step)],
            vec!["total".into(), ms(self.mean_step_seconds)],
        ];
        let heap = self.peak_heap_bytes.map_or_else(
            || "n/a".to_string(),
            |b| format!("{:.1} MiB", b as f64 / (1 << 20) as f64),
        );
        format!(
            "{} steps of batch {} at L={}: {:.2} steps/s, peak heap {heap}, peak tape {:.1} MiB\n{}",
            self.steps,
            self.batch_size,
            self.hops,
            self.steps_per_sec,
            self.peak_tape_bytes as f64 / (1 << 20) as f64,
            render_table(&["phase", "ms/step"], &rows)
        )
    }
}

/// Times `steps` training steps on batches of `batch_size` labeled nodes
/// after two untimed warm-up steps.
pub fn bench(
    hops: &HopTensor,
    labels: &LabeledNodes,
    cfg: &TrainConfig,
    batch_size: usize,
    steps: usize,
) -> Result<BenchReport> {
    if steps == 0 || batch_size < 2 {
        return Err(Error::InvalidArgument("bench needs steps >= 1 and batch >= 2".into()));
    }
    let mut pool = labels.labeled_ids();
    if pool.len() < 2 {
        return Err(Error::Data("bench needs at least two labeled nodes".into()));
    }
    pool.shuffle(&mut stream_rng(cfg.seed, Stream::Bench));
    let batch: Vec<usize> = pool.iter().cycle().take(batch_size).copied().collect();
    let mut tr = Trainer::new(cfg, hops, labels)?;
    for _ in 0..2 {
        tr.step(&batch)?;
    }
    tr.timings = PhaseTimings::default();
    alloc::reset_peak();
    let t = Instant::now();
    for _ in 0..steps {
        tr.step(&batch)?;
    }
    let elapsed = t.elapsed().as_secs_f64();
    let n = steps as f64;
    let p = &tr.timings;
    let phases = PhaseTimings {
        steps,
        gather: p.gather / n,
        forward: p.forward / n,
        backward: p.backward / n,
        step: p.step / n,
        eval: 0.0,
    };
    Ok(BenchReport {
        steps,
        batch_size,
        hops: tr.config().model.hops,
        steps_per_sec: n / elapsed,
        mean_step_seconds: elapsed / n,
        phases,
        peak_heap_bytes: alloc::installed().then(alloc::peak_bytes),
        peak_tape_bytes: tr.peak_tape_bytes(),
        hop_cache_bytes: tr.hops().size_bytes(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingLayer {
    /// Interaction output, flattened to `(L+1) d` columns.
    HK,
    /// Fused representation, `d` columns.
    Z,
}

impl FromStr for EmbeddingLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HK" | "hk" => Ok(Self::HK),
            "Z" | "z" => Ok(Self::Z),
            _ => Err(Error::InvalidArgument(format!("unknown layer {s:?}, expected HK or Z"))),
        }
    }
}

/// Copy of `ds` with about `factor` times as many undirected edges; the
/// extra edges are uniform random non-loop pairs.
pub fn densify(ds: &Dataset, factor: usize, seed: u64) -> Result<Dataset> {
    let n = ds.num_nodes();
    let mut edges: std::collections::HashSet<(usize, usize)> = ds.graph.undirected_edges().into_iter().collect();
    let target = edges.len() * factor.max(1);
    let possible = n * n.saturating_sub(1) / 2;
    if target > possible {
        return Err(Error::InvalidArgument(format!(
            "{target} edges do not fit in {n} nodes"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Bench);
    while edges.len() < target {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let mut edges: Vec<_> = edges.into_iter().collect();
    edges.sort_unstable();
    Ok(Dataset {
        graph: SparseGraph::from_edges(n, &edges, true)?,
        ..ds.clone()
    })
}

/// Eval-mode representations of every node in the cache.
pub fn export_embeddings(
    ckpt: &Checkpoint,
    hops: &HopTensor,
    layer: EmbeddingLayer,
    batch_size: usize,
) -> Result<FeatureMatrix> {
    let hops = hops_for(hops, &ckpt.config)?;
    let ids: Vec<usize> = (0..hops.num_nodes()).collect();
    let out = infer(&ckpt.params, &ckpt.config, &hops, &ids, batch_size, true)?;
    let d = ckpt.config.hidden;
    match layer {
        EmbeddingLayer::Z => FeatureMatrix::new(ids.len(), d, out.z),
        EmbeddingLayer::HK => FeatureMatrix::new(ids.len(), ckpt.config.tokens() * d, out.hk),
    }
}
