//! Seeded synthetic datasets small enough to commit.
//!
//! The parity set makes the class depend on which hop carries a signal, not
//! on the multiset of hop features. Every labeled center `c` has `K` first-ring
//! neighbours `a`, each with `M` leaves `b`:
//!
//! ```text
//! x_c = 0
//! x_a = ( r s,  w, q)
//! x_b = (M+1)/M * (-r s, w, q)
//! ```
//!
//! With row normalization and no self-loops, hop 1 of `c` is the mean of
//! `(r s, w, q)` over its `a` nodes and hop 2 is the same mean with the first
//! channel negated. Swapping `s` swaps the two hop tokens, so a model that
//! ignores hop order scores at chance while the sign of hop 1, channel 0 is
//! exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::graph::{FeatureMatrix, LabeledNodes, SparseGraph, UNLABELED};

/// First-ring neighbours per center.
pub const PARITY_RING: usize = 2;
/// Leaves per first-ring node.
pub const PARITY_LEAVES: usize = 2;

/// `centers` labeled nodes with their neighbourhoods; `centers * (1 + K + K M)`
/// nodes in total, 3 feature columns, 2 classes.
pub fn parity_toy(centers: usize, seed: u64) -> Result<Dataset> {
    let (k, m) = (PARITY_RING, PARITY_LEAVES);
    let per = 1 + k + k * m;
    let n = centers * per;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).expect("valid normal");
    let mut features = vec![0.0f32; n * 3];
    let mut labels = vec![UNLABELED; n];
    let mut edges = Vec::with_capacity(centers * k * (1 + m));
    let leaf_scale = (m + 1) as f64 / m as f64;
    for c in 0..centers {
        let base = c * per;
        let class = rng.gen_range(0..2u32);
        labels[base] = class;
        let s = if class == 1 { 1.0 } else { -1.0 };
        for j in 0..k {
            let a = base + 1 + j;
            edges.push((base, a));
            let r = rng.gen_range(0.5..1.5);
            let w = normal.sample(&mut rng);
            let q = normal.sample(&mut rng);
            features[a * 3..a * 3 + 3].copy_from_slice(&[(r * s) as f32, w as f32, q as f32]);
            for l in 0..m {
                let b = base + 1 + k + j * m + l;
                edges.push((a, b));
                let leaf = [-r * s * leaf_scale, w * leaf_scale, q * leaf_scale];
                features[b * 3..b * 3 + 3].copy_from_slice(&leaf.map(|v| v as f32));
            }
        }
    }
    Ok(Dataset {
        name: "toy-parity".into(),
        graph: SparseGraph::from_edges(n, &edges, true)?,
        features: FeatureMatrix::new(n, 3, features)?,
        labels: LabeledNodes::with_classes(labels, 2)?,
    })
}

/// Two-block stochastic block model with class-dependent Gaussian features.
pub fn homophily_toy(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { 0.25 } else { 0.02 };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let normal = Normal::new(0.0f64, 1.0).expect("valid normal");
    let mut features = Vec::with_capacity(n * dim);
    for &y in &labels {
        for j in 0..dim {
            let mean = if j % 2 == y as usize { 0.6 } else { -0.6 };
            features.push((mean + normal.sample(&mut rng)) as f32);
        }
    }
    Ok(Dataset {
        name: "toy-homophily".into(),
        graph: SparseGraph::from_edges(n, &edges, true)?,
        features: FeatureMatrix::new(n, dim, features)?,
        labels: LabeledNodes::with_classes(labels, 2)?,
    })
}
