//! Scalar reference implementations and fixtures shared by the integration
//! tests. Everything here is written as plain loops over `f64`.

#![allow(dead_code)]

use std::path::PathBuf;

use hopflow::graph::NormMode;
use hopflow::train::TrainConfig;
use rand::Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(name: &str) -> TrainConfig {
    TrainConfig::load(repo_root().join("configs").join(format!("{name}.json"))).unwrap()
}

/// `$HOPFLOW_DATA/<name>` or `<repo>/data/<name>`, if it holds a dataset.
pub fn dataset_dir(name: &str) -> Option<PathBuf> {
    let mut candidates = Vec::new();
    if let Some(root) = std::env::var_os("HOPFLOW_DATA") {
        candidates.push(PathBuf::from(root).join(name));
    }
    candidates.push(repo_root().join("data").join(name));
    candidates.into_iter().find(|d| d.join("features.bin").is_file())
}

/// Random undirected edge list on `n` nodes with self-loops and duplicates
/// mixed in.
pub fn random_edges(rng: &mut impl Rng, n: usize) -> Vec<(usize, usize)> {
    let m = rng.gen_range(0..=n * 2);
    (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect()
}

/// Dense normalized adjacency built straight from the edge list.
pub fn dense_normalized(n: usize, edges: &[(usize, usize)], mode: NormMode, self_loops: bool) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for &(u, v) in edges {
        if u != v {
            a[u * n + v] = 1.0;
            a[v * n + u] = 1.0;
        }
    }
    if self_loops {
        for i in 0..n {
            a[i * n + i] += 1.0;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    let inv = |d: f64| if d > 0.0 { 1.0 / d } else { 0.0 };
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= match mode {
                NormMode::Sym => inv(deg[i]).sqrt() * inv(deg[j]).sqrt(),
                NormMode::Row => inv(deg[i]),
            };
        }
    }
    a
}

pub fn dense_matmul(a: &[f64], x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..n {
            for j in 0..d {
                out[i * d + j] += a[i * n + k] * x[k * d + j];
            }
        }
    }
    out
}

/// `[X, AX, ..., A^L X]` as `L+1` row-major `n x d` blocks.
pub fn dense_hops(a: &[f64], x: &[f64], n: usize, d: usize, hops: usize) -> Vec<Vec<f64>> {
    let mut out = vec![x.to_vec()];
    for _ in 0..hops {
        let next = dense_matmul(a, out.last().unwrap(), n, d);
        out.push(next);
    }
    out
}

/// Multi-head self-attention over `x: b x l x d`, one query at a time.
pub fn attention(
    x: &[f64],
    b: usize,
    l: usize,
    d: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    heads: usize,
) -> Vec<f64> {
    let dh = d / heads;
    let proj =
        |w: &[f64], n: usize, t: usize, c: usize| (0..d).map(|k| x[(n * l + t) * d + k] * w[k * d + c]).sum::<f64>();
    let mut out = vec![0.0; b * l * d];
    for n in 0..b {
        for h in 0..heads {
            for qi in 0..l {
                let mut scores = vec![0.0; l];
                for (kj, s) in scores.iter_mut().enumerate() {
                    for c in h * dh..(h + 1) * dh {
                        *s += proj(wq, n, qi, c) * proj(wk, n, kj, c);
                    }
                    *s /= (dh as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                for c in h * dh..(h + 1) * dh {
                    out[(n * l + qi) * d + c] = (0..l).map(|kj| exp[kj] / total * proj(wv, n, kj, c)).sum();
                }
            }
        }
    }
    out
}

/// Redundancy-reduction loss over standardized columns of two `n x d` views.
pub fn barlow(a: &[f64], b: &[f64], n: usize, d: usize, alpha: f64) -> f64 {
    let column = |x: &[f64], c: usize| -> Vec<f64> {
        let col: Vec<f64> = (0..n).map(|i| x[i * d + c]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        col.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
    };
    let mut loss = 0.0;
    for i in 0..d {
        let zi = column(a, i);
        for j in 0..d {
            let zj = column(b, j);
            let c = (0..n).map(|k| zi[k] * zj[k]).sum::<f64>() / n as f64;
            loss += if i == j { (1.0 - c).powi(2) } else { alpha * c * c };
        }
    }
    loss
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
