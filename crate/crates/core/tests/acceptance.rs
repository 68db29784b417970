//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset. Real datasets are looked up under
//! `$HOPFLOW_DATA/<name>` and `<repo>/data/<name>`; a criterion whose dataset
//! is missing prints FAIL with the reason but does not fail the process, since
//! nothing was measured. Any measured failure exits non-zero.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hopflow::autodiff::ops::*;
use hopflow::autodiff::{check_gradients, Tape, Var};
use hopflow::dataset::{load_dataset, save_dataset, Dataset};
use hopflow::error::Result;
use hopflow::experiments::{densify, sweep_on_cache};
use hopflow::graph::{normalize, FeatureMatrix, LabeledNodes, NormMode, SparseGraph, Split};
use hopflow::hops::{precompute_hops, spmm};
use hopflow::model::{forward, Bound, FusionKind, InteractionKind, ModelConfig, ParamStore};
use hopflow::objectives::{barlow_loss, cross_entropy, scl_loss, total_loss};
use hopflow::tensor::Tensor;
use hopflow::train::{precompute_for, protocol_splits, run_protocol, run_splits, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Inputs are missing, so nothing was measured.
    Missing(String),
}

use Outcome::*;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn missing(names: &[&str]) -> Outcome {
    let found: Vec<String> = names
        .iter()
        .map(|n| format!("dataset {n} not found in $HOPFLOW_DATA/{n} or data/{n}"))
        .collect();
    Missing(format!("{}; fetch with scripts/fetch_datasets.py", found.join(", ")))
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum with fixed pseudo-random coefficients, so every output entry
/// gets a distinct upstream gradient.
fn probe(t: &mut Tape<f64>, y: Var) -> Var {
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0).collect();
    let w = t.leaf(Tensor::new(shape, w).unwrap(), false);
    let p = mul(t, y, w).unwrap();
    sum(t, p)
}

fn gradient_integrity() -> Outcome {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x3 = rand_tensor(&mut rng, &[2, 3, 4]);
    let m = rand_tensor(&mut rng, &[4, 4]);
    let w = rand_tensor(&mut rng, &[4, 3]);
    let bias = rand_tensor(&mut rng, &[3]);
    let hopw = rand_tensor(&mut rng, &[2, 3]);
    let (g, be) = (rand_tensor(&mut rng, &[4]), rand_tensor(&mut rng, &[4]));
    let x2 = rand_tensor(&mut rng, &[6, 4]);
    let y2 = rand_tensor(&mut rng, &[6, 4]);
    let labels = [0usize, 1, 2, 0, 1, 1];

    type Kernel = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;
    let cases: Vec<(&str, Vec<Tensor<f64>>, Kernel)> = vec![
        (
            "linear",
            vec![x3.clone(), w.clone(), bias.clone()],
            Box::new(|t, v| linear(t, v[0], v[1], Some(v[2]))),
        ),
        (
            "add",
            vec![x3.clone(), rand_tensor(&mut rng, &[3, 4])],
            Box::new(|t, v| add(t, v[0], v[1])),
        ),
        (
            "residual",
            vec![x2.clone(), y2.clone()],
            Box::new(|t, v| residual(t, v[0], v[1])),
        ),
        ("mul", vec![x2.clone(), y2.clone()], Box::new(|t, v| mul(t, v[0], v[1]))),
        ("scale", vec![x2.clone()], Box::new(|t, v| Ok(scale(t, v[0], -1.7)))),
        ("relu", vec![x3.clone()], Box::new(|t, v| Ok(relu(t, v[0])))),
        (
            "reshape",
            vec![x3.clone()],
            Box::new(|t, v| reshape(t, v[0], vec![6, 4])),
        ),
        ("flatten", vec![x3.clone()], Box::new(|t, v| flatten(t, v[0]))),
        (
            "layer_norm",
            vec![x3.clone(), g, be],
            Box::new(|t, v| layer_norm(t, v[0], v[1], v[2], 1e-5)),
        ),
        (
            "dropout",
            vec![x3.clone()],
            Box::new(|t, v| dropout(t, v[0], 0.4, true, &mut ChaCha8Rng::seed_from_u64(9))),
        ),
        ("softmax", vec![x3.clone()], Box::new(|t, v| Ok(softmax(t, v[0])))),
        ("mean_pool", vec![x3.clone()], Box::new(|t, v| mean_pool(t, v[0]))),
        ("max_pool", vec![x3.clone()], Box::new(|t, v| max_pool(t, v[0]))),
        ("hop_mix", vec![x3.clone()], Box::new(|t, v| hop_mix(t, v[0], false))),
        (
            "hop_mix_others",
            vec![x3.clone()],
            Box::new(|t, v| hop_mix(t, v[0], true)),
        ),
        (
            "weighted_hop_sum",
            vec![x3.clone(), hopw],
            Box::new(|t, v| weighted_hop_sum(t, v[0], v[1])),
        ),
        (
            "concat_last",
            vec![x3.clone(), rand_tensor(&mut rng, &[2, 3, 2])],
            Box::new(|t, v| concat_last(t, v[0], v[1])),
        ),
        (
            "concat_rows",
            vec![x2.clone(), y2.clone()],
            Box::new(|t, v| concat_rows(t, v[0], v[1])),
        ),
        (
            "multi_head_attention",
            vec![
                x3.clone(),
                m.clone(),
                rand_tensor(&mut rng, &[4, 4]),
                rand_tensor(&mut rng, &[4, 4]),
            ],
            Box::new(|t, v| multi_head_attention(t, v[0], v[1], v[2], v[3], 2)),
        ),
        (
            "cross_entropy",
            vec![x2.clone()],
            Box::new(move |t, v| cross_entropy(t, v[0], &labels, None)),
        ),
        (
            "barlow_loss",
            vec![x2.clone(), y2.clone()],
            Box::new(|t, v| barlow_loss(t, v[0], v[1], 0.1)),
        ),
        (
            "scl_loss",
            vec![x2.clone()],
            Box::new(move |t, v| scl_loss(t, v[0], &labels, 0.5, true)),
        ),
        (
            "scl_loss_raw",
            vec![x2.clone()],
            Box::new(move |t, v| scl_loss(t, v[0], &labels, 0.5, false)),
        ),
    ];

    let mut worst = (0.0f64, "none");
    let mut failed = Vec::new();
    for (name, inputs, f) in &cases {
        let r = check_gradients(inputs, 1e-6, |t, v| {
            let y = f(t, v)?;
            Ok(if t.shape(y).is_empty() { y } else { probe(t, y) })
        });
        match r {
            Ok(r) if r.max_rel_err < TOL => {
                if r.max_rel_err > worst.0 {
                    worst = (r.max_rel_err, name);
                }
            }
            Ok(r) => failed.push(format!("{name} {:.2e}", r.max_rel_err)),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }

    // Full model on a 6-node graph: L=2, K=2, d=8, CE plus the redundancy
    // term on two dropout-free views.
    let g = SparseGraph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)], true).unwrap();
    let x = FeatureMatrix::new(6, 3, (0..18).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
    let hops = precompute_hops(&normalize(&g, NormMode::Sym, true), &x, 2).unwrap();
    let batch = Tensor::new(vec![6, 3, 3], hops.data().iter().map(|&v| v as f64).collect()).unwrap();
    let y = [0usize, 1, 0, 1, 1, 0];
    let mut models = 0;
    for kind in InteractionKind::ALL {
        for fusion in FusionKind::ALL {
            let cfg = ModelConfig {
                input_dim: 3,
                hops: 2,
                interaction_layers: 2,
                hidden: 8,
                heads: 2,
                interaction_kind: kind,
                fusion_kind: fusion,
                dropout: 0.0,
                num_classes: 2,
                ..Default::default()
            };
            let mut store = ParamStore::init(&cfg, &mut rng).unwrap();
            for (_, t) in store.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
            }
            let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
            let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.cast()).collect();
            inputs.push(batch.clone());
            let r = check_gradients(&inputs, 1e-6, |t, v| {
                let p = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
                let x = *v.last().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let a = forward(t, &p, &cfg, x, true, &mut rng)?;
                let b = forward(t, &p, &cfg, x, true, &mut rng)?;
                let ce = cross_entropy(t, a.logits, &y, None)?;
                let (ha, hb) = (flatten(t, a.hk)?, flatten(t, b.hk)?);
                let ssl = barlow_loss(t, ha, hb, 0.1)?;
                total_loss(t, ce, Some(ssl), 0.5)
            });
            let label = format!("model {kind}/{fusion}");
            match r {
                Ok(r) if r.max_rel_err < TOL => {
                    if r.max_rel_err > worst.0 {
                        worst.0 = r.max_rel_err;
                    }
                }
                Ok(r) => failed.push(format!("{label} {:.2e}", r.max_rel_err)),
                Err(e) => failed.push(format!("{label}: {e}")),
            }
            models += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} kernels and {models} model variants, worst rel err {:.2e} (< {TOL:.0e}), {secs:.1}s (< 60s){}",
            cases.len(),
            worst.0,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut hop_err = 0.0f64;
    for i in 0..200 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=4);
        let l = rng.gen_range(0..=4);
        let mode = if i % 2 == 0 { NormMode::Sym } else { NormMode::Row };
        let loops = i % 3 != 0;
        let edges = common::random_edges(&mut rng, n);
        let a = normalize(&SparseGraph::from_edges(n, &edges, true).unwrap(), mode, loops);
        let dense = common::dense_normalized(n, &edges, mode, loops);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();
        let xm = FeatureMatrix::new(n, d, x.iter().map(|&v| v as f32).collect()).unwrap();
        let y: Vec<f64> = spmm(&a, &xm).unwrap().data().iter().map(|&v| v as f64).collect();
        hop_err = hop_err.max(common::max_abs_diff(&y, &common::dense_matmul(&dense, &x, n, d)));
        let h = precompute_hops(&a, &xm, l).unwrap();
        for (k, block) in common::dense_hops(&dense, &x, n, d, l).iter().enumerate() {
            let got: Vec<f64> = (0..n).flat_map(|i| h.hop(i, k).iter().map(|&v| v as f64)).collect();
            hop_err = hop_err.max(common::max_abs_diff(&got, block));
        }
    }

    let mut att_err = 0.0f64;
    let mut barlow_err = 0.0f64;
    for _ in 0..50 {
        let (b, l, heads) = (rng.gen_range(1..=3), rng.gen_range(1..=7), rng.gen_range(1..=2));
        let d = heads * rng.gen_range(1..=4);
        let data =
            |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect() };
        let (x, wq, wk, wv) = (
            data(&mut rng, b * l * d),
            data(&mut rng, d * d),
            data(&mut rng, d * d),
            data(&mut rng, d * d),
        );
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(Tensor::new(vec![b, l, d], x.clone()).unwrap(), false);
        let w: Vec<Var> = [&wq, &wk, &wv]
            .iter()
            .map(|w| t.leaf(Tensor::new(vec![d, d], w.to_vec()).unwrap(), false))
            .collect();
        let out = multi_head_attention(&mut t, xv, w[0], w[1], w[2], heads).unwrap();
        att_err = att_err.max(common::max_abs_diff(
            t.value(out).data(),
            &common::attention(&x, b, l, d, &wq, &wk, &wv, heads),
        ));

        let (n, d) = (rng.gen_range(2..=12), rng.gen_range(1..=6));
        let (a, bv) = (data(&mut rng, n * d), data(&mut rng, n * d));
        let alpha = rng.gen_range(0.0..1.0);
        let mut t = Tape::<f64>::new();
        let va = t.leaf(Tensor::new(vec![n, d], a.clone()).unwrap(), false);
        let vb = t.leaf(Tensor::new(vec![n, d], bv.clone()).unwrap(), false);
        let loss = barlow_loss(&mut t, va, vb, alpha).unwrap();
        barlow_err = barlow_err.max((t.value(loss).item() - common::barlow(&a, &bv, n, d, alpha)).abs());
    }
    verdict(
        hop_err < 1e-5 && att_err < 1e-6 && barlow_err < 1e-6,
        format!("spmm/hops {hop_err:.1e} (< 1e-5) over 200 graphs, attention {att_err:.1e} (< 1e-6), barlow {barlow_err:.1e} (< 1e-6)"),
    )
}

fn protocol(name: &str) -> Option<(f64, f64, f64)> {
    let dir = common::dataset_dir(name)?;
    let t = Instant::now();
    let out = run_protocol(&dir, &common::config(name)).expect("protocol run");
    Some((out.report.mean, out.report.std, t.elapsed().as_secs_f64()))
}

fn cora_accuracy() -> Outcome {
    match protocol("cora") {
        None => missing(&["cora"]),
        Some((mean, std, secs)) => verdict(
            mean >= 0.84 && secs < 1200.0,
            format!(
                "mean {:.2} +- {:.2} (>= 84.00), {secs:.0}s (< 1200s)",
                100.0 * mean,
                100.0 * std
            ),
        ),
    }
}

fn citeseer_texas_accuracy() -> Outcome {
    let (Some(_), Some(_)) = (common::dataset_dir("citeseer"), common::dataset_dir("texas")) else {
        let absent: Vec<&str> = ["citeseer", "texas"]
            .into_iter()
            .filter(|n| common::dataset_dir(n).is_none())
            .collect();
        return missing(&absent);
    };
    let (c, _, tc) = protocol("citeseer").unwrap();
    let (x, _, tx) = protocol("texas").unwrap();
    verdict(
        c >= 0.72 && x >= 0.75 && tc + tx < 900.0,
        format!(
            "citeseer {:.2} (>= 72.00), texas {:.2} (>= 75.00), {:.0}s (< 900s)",
            100.0 * c,
            100.0 * x,
            tc + tx
        ),
    )
}

fn ssl_benefit() -> Outcome {
    let Some(dir) = common::dataset_dir("cora") else {
        return missing(&["cora"]);
    };
    let plain_cfg = common::config("cora");
    let mut ssl_cfg = plain_cfg.clone();
    ssl_cfg.apply_override("loss.ssl_kind=barlow").unwrap();
    ssl_cfg.loss.lambda = 5e-4;
    ssl_cfg.loss.alpha = 0.1;
    let plain = run_protocol(&dir, &plain_cfg).unwrap().report;
    let ssl = run_protocol(&dir, &ssl_cfg).unwrap().report;
    let wins = ssl
        .accuracies
        .iter()
        .zip(&plain.accuracies)
        .filter(|(s, p)| s >= p)
        .count();
    verdict(
        ssl.mean >= plain.mean - 0.003 && wins >= 6,
        format!(
            "barlow {:.2} vs plain {:.2} (>= plain - 0.30), at least as good on {wins}/10 splits (>= 6)",
            100.0 * ssl.mean,
            100.0 * plain.mean
        ),
    )
}

fn parity_toy() -> (Dataset, Vec<Split>, TrainConfig) {
    let dir = common::repo_root().join("data/toy-parity");
    let ds = load_dataset(&dir).unwrap();
    let cfg = common::config("toy-parity");
    let splits = protocol_splits(&dir, &ds, &cfg).unwrap();
    (ds, splits, cfg)
}

fn order_ablation() -> Outcome {
    let (ds, splits, cfg) = parity_toy();
    let hops = precompute_for(&ds, &cfg, cfg.model.hops).unwrap();
    let ids = ds.labels.labeled_ids();
    let solved = ids
        .iter()
        .filter(|&&c| (hops.hop(c, 1)[0] > 0.0) == (ds.labels.get(c) == Some(1)))
        .count();
    let with = run_splits(&ds.name, &hops, &ds.labels, &splits, &cfg).unwrap().report;
    let mut blind = cfg.clone();
    blind.model.use_order_embedding = false;
    let without = run_splits(&ds.name, &hops, &ds.labels, &splits, &blind).unwrap().report;
    verdict(
        solved == ids.len() && with.mean > 0.95 && without.mean < 0.70,
        format!(
            "constructed rule solves {solved}/{}; with order embedding {:.2} (> 95), without {:.2} (< 70) over {} splits",
            ids.len(),
            100.0 * with.mean,
            100.0 * without.mean,
            splits.len()
        ),
    )
}

fn over_smoothing() -> Outcome {
    let (ds, splits, cfg) = parity_toy();
    let mut flat = cfg.clone();
    flat.model.interaction_kind = InteractionKind::None;
    let hops = precompute_for(&ds, &flat, 4).unwrap();
    let contrast = sweep_on_cache(&ds.name, &hops, &ds.labels, &splits, &flat, &[1, 2, 4], false).unwrap();
    let mut detail = String::from("contrast, interaction=none on toy-parity:");
    for r in &contrast.rows {
        let _ = write!(detail, " L={} {:.1}", r.hops, 100.0 * r.mean);
    }
    let Some(dir) = common::dataset_dir("cora") else {
        let Missing(why) = missing(&["cora"]) else {
            unreachable!()
        };
        return Missing(format!("{why}; {detail}"));
    };
    let cfg = common::config("cora");
    let ds = load_dataset(&dir).unwrap();
    let splits = protocol_splits(&dir, &ds, &cfg).unwrap();
    let hops = precompute_for(&ds, &cfg, 32).unwrap();
    let sweep = sweep_on_cache(&ds.name, &hops, &ds.labels, &splits, &cfg, &[2, 6, 16, 32], false).unwrap();
    verdict(
        sweep.spread <= 0.025,
        format!(
            "cora spread over L in 2,6,16,32 is {:.2} points (<= 2.5); {detail}",
            100.0 * sweep.spread
        ),
    )
}

/// Random graph with planted classes and about `degree` neighbours per node.
fn synthetic(n: usize, d: usize, degree: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = (0..n * degree / 2)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect();
    let labels: Vec<u32> = (0..n).map(|i| (i % 4) as u32).collect();
    let x = (0..n * d)
        .map(|k| labels[k / d] as f32 * 0.1 + rng.gen_range(-1.0f32..1.0))
        .collect();
    Dataset {
        name: "synthetic".into(),
        graph: SparseGraph::from_edges(n, &edges, true).unwrap(),
        features: FeatureMatrix::new(n, d, x).unwrap(),
        labels: LabeledNodes::with_classes(labels, 4).unwrap(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn scalability() -> Outcome {
    // Step time through the binary, alternating plain and densified runs so
    // drift on a shared machine hits both alike.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic");
    let base = synthetic(4000, 32, 6, 3);
    save_dataset(&data, &base).unwrap();
    let dense_edges = densify(&base, 10, 0).unwrap().graph.num_undirected_edges();
    let ratio_edges = dense_edges as f64 / base.graph.num_undirected_edges() as f64;
    let bench = |factor: &str| -> f64 {
        let out = dir.path().join(format!("bench-{factor}.json"));
        let run = Command::new(env!("CARGO_BIN_EXE_hopflow"))
            .args([
                "bench",
                "--batch",
                "512",
                "--steps",
                "20",
                "--override",
                "model.hidden=64",
                "--densify",
                factor,
            ])
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
        report["mean_step_seconds"].as_f64().unwrap()
    };
    let (mut plain, mut dense) = (Vec::new(), Vec::new());
    for _ in 0..5 {
        plain.push(bench("1"));
        dense.push(bench("10"));
    }
    let (t_base, t_dense) = (median(plain), median(dense));
    let step_ratio = t_dense / t_base;

    let big = synthetic(20000, 32, 20, 5);
    let a = normalize(&big.graph, NormMode::Sym, true);
    let time = |l: usize| {
        median(
            (0..3)
                .map(|_| {
                    let t = Instant::now();
                    precompute_hops(&a, &big.features, l).unwrap();
                    t.elapsed().as_secs_f64()
                })
                .collect(),
        )
    };
    let (t4, t16) = (time(4), time(16));
    let growth = (t16 / t4) / 4.0;
    verdict(
        (step_ratio - 1.0).abs() <= 0.2 && (1.0 / 1.5..=1.5).contains(&growth),
        format!(
            "step time {:.2} ms vs {:.2} ms with {ratio_edges:.1}x edges (ratio {step_ratio:.3}, within 1 +- 0.2); precompute L=16/L=4 {:.2}x, {growth:.2} of proportional (within x1.5)",
            1e3 * t_base,
            1e3 * t_dense,
            t16 / t4
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = common::repo_root().join("data/toy-parity");
    let cfg = common::repo_root().join("configs/toy-parity.json");
    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_hopflow"))
            .args(["train", "--data"])
            .arg(&data)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    let mut files = vec!["report.json".to_string()];
    let mut names: Vec<String> = fs::read_dir(a.join("checkpoints"))
        .unwrap()
        .map(|e| format!("checkpoints/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    names.sort();
    files.extend(names);
    let differ: Vec<&String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .collect();
    verdict(
        differ.is_empty(),
        format!(
            "{} files compared across two cmd_train runs, {} differ {differ:?}",
            files.len(),
            differ.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient integrity", gradient_integrity),
        ("oracle equivalence", oracle_equivalence),
        ("cora accuracy", cora_accuracy),
        ("citeseer and texas accuracy", citeseer_texas_accuracy),
        ("ssl benefit", ssl_benefit),
        ("order-embedding ablation", order_ablation),
        ("over-smoothing robustness", over_smoothing),
        ("scalability", scalability),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut measured_failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (tag, detail) = match check() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                measured_failures += 1;
                ("FAIL", d)
            }
            Missing(d) => ("FAIL", format!("not measured: {d}")),
        };
        println!("{tag} {id} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
    }
    if measured_failures > 0 {
        std::process::exit(1);
    }
}
