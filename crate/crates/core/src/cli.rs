//! Command-line front end. The `hopflow` binary calls [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{load_dataset, save_dataset, write_matrix, Dataset};
use crate::error::{Error, Result};
use crate::experiments::{ablate, bench, densify, export_embeddings, sweep_on_cache, EmbeddingLayer, Suite};
use crate::graph::{edge_homophily, normalize, NormMode};
use crate::hops::{load_hops, precompute_hops, save_hops, HopTensor};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::toy::{homophily_toy, parity_toy};
use crate::train::{evaluate, precompute_for, protocol_splits, run_splits, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "hopflow", version, about = "Hop-interaction node classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override such as `loss.ssl_kind=barlow`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate features and write an HGH1 hop cache.
    Precompute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 6)]
        hops: usize,
        #[arg(long, default_value = "sym")]
        norm: NormMode,
        /// Add self-loops before normalizing (default).
        #[arg(long, overrides_with = "no_self_loops")]
        self_loops: bool,
        #[arg(long)]
        no_self_loops: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per split and write reports and checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one part of a split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        split_index: usize,
        /// train, val, test or all (every labeled node).
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// Run an ablation suite and print deltas against the given config.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        suite: Suite,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run variants concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Accuracy as a function of the number of hops.
    SweepHops {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 32)]
        max_hops: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,6,16,32")]
        layers_list: Vec<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Time training steps.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 3000)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Multiply the edge count with random edges before pre-computing.
        #[arg(long, default_value_t = 1)]
        densify: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write eval-mode node representations as an HGF1 matrix.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "Z")]
        layer: EmbeddingLayer,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a bundled synthetic dataset.
    MakeToy {
        /// parity or homophily
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Labeled centers (parity) or nodes (homophily).
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Fills a sibling `<out>.partial` directory and renames it into place, so
/// `out` is either absent, the previous result or the complete new one.
fn with_output_dir(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut partial = out.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    fs::create_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    fill(&partial)?;
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    fs::rename(&partial, out).map_err(|e| Error::io(out, e))
}

fn hops_for_run(ds: &Dataset, cache: Option<&Path>, cfg: &TrainConfig, needed: usize) -> Result<HopTensor> {
    match cache {
        Some(path) => {
            let h = load_hops(path)?;
            if h.num_nodes() != ds.num_nodes() {
                return Err(Error::Data(format!(
                    "cache {} has {} nodes, dataset has {}",
                    path.display(),
                    h.num_nodes(),
                    ds.num_nodes()
                )));
            }
            Ok(h)
        }
        None => precompute_for(ds, cfg, needed),
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Precompute {
            data,
            hops,
            norm,
            self_loops: _,
            no_self_loops,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let t = Instant::now();
            let a = normalize(&ds.graph, norm, !no_self_loops);
            let h = precompute_hops(&a, &ds.features, hops)?;
            let secs = t.elapsed().as_secs_f64();
            save_hops(&h, &out)?;
            let bytes = fs::metadata(&out).map_err(|e| Error::io(&out, e))?.len();
            println!(
                "wrote {} ({} x {} x {}, {bytes} bytes) in {secs:.3}s",
                out.display(),
                h.num_nodes(),
                h.num_hops(),
                h.dim()
            );
        }
        Command::Train { data, cache, cfg, out } => {
            let cfg = cfg.load()?;
            let ds = load_dataset(&data)?;
            let splits = protocol_splits(&data, &ds, &cfg)?;
            let t = Instant::now();
            let hops = hops_for_run(&ds, cache.as_deref(), &cfg, cfg.model.hops)?;
            let pre = t.elapsed().as_secs_f64();
            let result = run_splits(&ds.name, &hops, &ds.labels, &splits, &cfg)?;
            with_output_dir(&out, |dir| {
                write_json(&dir.join("report.json"), &result.report)?;
                write_json(&dir.join("config.json"), &cfg)?;
                #[derive(Serialize)]
                struct Timing<'a> {
                    precompute_seconds: f64,
                    runs: &'a [crate::train::RunTimings],
                }
                write_json(
                    &dir.join("timing.json"),
                    &Timing {
                        precompute_seconds: if cache.is_some() { 0.0 } else { pre },
                        runs: &result.timings,
                    },
                )?;
                let ckdir = dir.join("checkpoints");
                fs::create_dir(&ckdir).map_err(|e| Error::io(&ckdir, e))?;
                for (i, ck) in result.checkpoints.iter().enumerate() {
                    save_checkpoint(ck, ckdir.join(format!("split-{i:02}.hgm")))?;
                }
                let row = result.report.row();
                let text = crate::experiments::render_table(
                    &["dataset", "mean", "std", "splits"],
                    &[vec![
                        row.name,
                        format!("{:.2}", 100.0 * row.mean),
                        format!("{:.2}", 100.0 * row.std),
                        result.report.num_splits.to_string(),
                    ]],
                );
                fs::write(dir.join("summary.txt"), &text).map_err(|e| Error::io(dir, e))?;
                print!("{text}");
                Ok(())
            })?;
        }
        Command::Eval {
            data,
            cache,
            checkpoint,
            cfg,
            split_index,
            part,
        } => {
            let cfg = cfg.load()?;
            let ck = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let splits = protocol_splits(&data, &ds, &cfg)?;
            let split = splits
                .get(split_index)
                .ok_or_else(|| Error::InvalidArgument(format!("split {split_index} of {}", splits.len())))?;
            let ids = match part.as_str() {
                "train" => split.train.clone(),
                "val" => split.val.clone(),
                "test" => split.test.clone(),
                "all" => ds.labels.labeled_ids(),
                other => return Err(Error::InvalidArgument(format!("unknown part {other:?}"))),
            };
            let hops = hops_for_run(&ds, cache.as_deref(), &cfg, ck.config.hops)?;
            print_json(&evaluate(&ck, &hops, &ids, &ds.labels, cfg.eval_batch_size)?);
        }
        Command::Ablate {
            data,
            cache,
            suite,
            cfg,
            out,
            parallel,
        } => {
            let cfg = cfg.load()?;
            let ds = load_dataset(&data)?;
            let splits = protocol_splits(&data, &ds, &cfg)?;
            let hops = hops_for_run(&ds, cache.as_deref(), &cfg, cfg.model.hops)?;
            let table = ablate(&ds.name, &hops, &ds.labels, &splits, &cfg, suite, parallel)?;
            print!("{}", table.to_text());
            if let Some(out) = out {
                write_json(&out, &table)?;
            }
        }
        Command::SweepHops {
            data,
            max_hops,
            layers_list,
            cfg,
            out,
            parallel,
        } => {
            let cfg = cfg.load()?;
            if let Some(&l) = layers_list.iter().find(|&&l| l > max_hops) {
                return Err(Error::InvalidArgument(format!(
                    "{l} hops exceeds --max-hops {max_hops}"
                )));
            }
            let ds = load_dataset(&data)?;
            let splits = protocol_splits(&data, &ds, &cfg)?;
            let hops = precompute_for(&ds, &cfg, max_hops)?;
            let table = sweep_on_cache(&ds.name, &hops, &ds.labels, &splits, &cfg, &layers_list, parallel)?;
            print!("{}", table.to_text());
            if let Some(out) = out {
                write_json(&out, &table)?;
            }
        }
        Command::Bench {
            data,
            cache,
            batch,
            steps,
            densify: factor,
            cfg,
            out,
        } => {
            let cfg = cfg.load()?;
            let mut ds = load_dataset(&data)?;
            if factor > 1 {
                if cache.is_some() {
                    return Err(Error::InvalidArgument("--densify needs the graph, not a cache".into()));
                }
                ds = densify(&ds, factor, cfg.seed)?;
            }
            let hops = hops_for_run(&ds, cache.as_deref(), &cfg, cfg.model.hops)?;
            let report = bench(&hops, &ds.labels, &cfg, batch, steps)?;
            print!("{}", report.to_text());
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        Command::ExportEmbeddings {
            checkpoint,
            cache,
            data,
            cfg,
            layer,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let hops = match (cache, data) {
                (Some(c), _) => load_hops(c)?,
                (None, Some(d)) => precompute_for(&load_dataset(d)?, &cfg.load()?, ck.config.hops)?,
                (None, None) => return Err(Error::InvalidArgument("pass --cache or --data".into())),
            };
            let m = export_embeddings(&ck, &hops, layer, 3000)?;
            write_matrix(&out, m.rows(), m.cols(), m.data())?;
            println!("wrote {} x {} to {}", m.rows(), m.cols(), out.display());
        }
        Command::MakeToy { kind, seed, size, out } => {
            let ds = match kind.as_str() {
                "parity" => parity_toy(size.unwrap_or(400), seed)?,
                "homophily" => homophily_toy(size.unwrap_or(50), 8, seed)?,
                other => return Err(Error::InvalidArgument(format!("unknown toy kind {other:?}"))),
            };
            save_dataset(&out, &ds)?;
            println!("wrote {} ({} nodes) to {}", ds.name, ds.num_nodes(), out.display());
        }
        Command::Stats { data } => {
            let ds = load_dataset(&data)?;
            #[derive(Serialize)]
            struct Stats {
                name: String,
                nodes: usize,
                edges: usize,
                features: usize,
                classes: usize,
                labeled: usize,
                /// Absent when some endpoint is unlabeled.
                edge_homophily: Option<f64>,
            }
            print_json(&Stats {
                edge_homophily: edge_homophily(&ds.graph, &ds.labels).ok(),
                name: ds.name.clone(),
                nodes: ds.num_nodes(),
                edges: ds.graph.num_undirected_edges(),
                features: ds.features.cols(),
                classes: ds.labels.num_classes(),
                labeled: ds.labels.labeled_ids().len(),
            });
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HOPFLOW_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("HOPFLOW_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match init_threads().and_then(|_| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
