//! Graph structure, labels, features and splits.
//!
//! [`SparseGraph`] is the only place graph structure lives. Everything that
//! runs at training time consumes [`crate::hops::HopTensor`] instead.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for nodes without a class.
pub const UNLABELED: u32 = u32::MAX;

/// CSR adjacency. Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseGraph {
    /// Builds a canonical graph from an edge list. Self-loops are dropped and
    /// duplicates merged; with `symmetrize` every edge is stored in both
    /// directions.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)], symmetrize: bool) -> Result<Self> {
        if num_nodes > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{num_nodes} nodes exceeds the 32-bit index range"
            )));
        }
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(edges.len() * if symmetrize { 2 } else { 1 });
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Data(format!("edge ({u}, {v}) references a node >= {num_nodes}")));
            }
            if u == v {
                continue;
            }
            pairs.push((u as u32, v as u32));
            if symmetrize {
                pairs.push((v as u32, u as u32));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            row_offsets[u as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices: Vec<u32> = pairs.iter().map(|&(_, v)| v).collect();
        let values = vec![1.0; col_indices.len()];
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles a graph from raw CSR arrays, checking every invariant.
    pub fn from_csr(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let g = Self {
            num_nodes,
            row_offsets,
            col_indices,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.row_offsets.len() != n + 1 || self.row_offsets[0] != 0 {
            return Err(Error::Data("row_offsets must have length N+1 and start at 0".into()));
        }
        if self.row_offsets[n] != self.col_indices.len() || self.values.len() != self.col_indices.len() {
            return Err(Error::Data("row_offsets[N] must equal nnz".into()));
        }
        for u in 0..n {
            let (lo, hi) = (self.row_offsets[u], self.row_offsets[u + 1]);
            if lo > hi {
                return Err(Error::Data(format!("row_offsets decrease at row {u}")));
            }
            let row = &self.col_indices[lo..hi];
            if row.iter().any(|&c| c as usize >= n) {
                return Err(Error::Data(format!("row {u} has a column index >= {n}")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!("row {u} is not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, u: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_offsets[u], self.row_offsets[u + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.num_nodes).any(|u| self.row(u).0.binary_search(&(u as u32)).is_ok())
    }

    /// Off-diagonal entries with `u < v`; equals the undirected edge count of a
    /// symmetric graph.
    pub fn num_undirected_edges(&self) -> usize {
        (0..self.num_nodes)
            .map(|u| self.row(u).0.iter().filter(|&&v| (v as usize) > u).count())
            .sum()
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|u| {
            self.row(u)
                .0
                .iter()
                .all(|&v| self.row(v as usize).0.binary_search(&(u as u32)).is_ok())
        })
    }

    /// Undirected edges `(u, v)` with `u < v`, in row order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_undirected_edges());
        for u in 0..self.num_nodes {
            for &v in self.row(u).0 {
                if (v as usize) > u {
                    out.push((u, v as usize));
                }
            }
        }
        out
    }

    /// Dense row-major copy. Intended for small graphs and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.num_nodes;
        let mut out = vec![0.0; n * n];
        for u in 0..n {
            let (cols, vals) = self.row(u);
            for (&v, &w) in cols.iter().zip(vals) {
                out[u * n + v as usize] = w;
            }
        }
        out
    }

    fn with_self_loops(&self) -> SparseGraph {
        let n = self.num_nodes;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + n);
        let mut values = Vec::with_capacity(self.nnz() + n);
        row_offsets.push(0);
        for u in 0..n {
            let (cols, vals) = self.row(u);
            let mut placed = false;
            for (&v, &w) in cols.iter().zip(vals) {
                if !placed && v as usize >= u {
                    if v as usize == u {
                        col_indices.push(v);
                        values.push(w + 1.0);
                        placed = true;
                        continue;
                    }
                    col_indices.push(u as u32);
                    values.push(1.0);
                    placed = true;
                }
                col_indices.push(v);
                values.push(w);
            }
            if !placed {
                col_indices.push(u as u32);
                values.push(1.0);
            }
            row_offsets.push(col_indices.len());
        }
        SparseGraph {
            num_nodes: n,
            row_offsets,
            col_indices,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `D^{-1/2} A D^{-1/2}`
    #[default]
    Sym,
    /// `D^{-1} A`
    Row,
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym" => Ok(NormMode::Sym),
            "row" => Ok(NormMode::Row),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalization {other:?} (expected sym or row)"
            ))),
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Sym => "sym",
            NormMode::Row => "row",
        })
    }
}

/// Degree-normalizes the adjacency, optionally adding the identity first.
///
/// Nodes whose degree is zero keep an empty row. Symmetric values are derived
/// from per-node degree factors so that `value(u, v)` and `value(v, u)` are
/// bit-identical.
pub fn normalize(g: &SparseGraph, mode: NormMode, add_self_loops: bool) -> SparseGraph {
    let mut out = if add_self_loops { g.with_self_loops() } else { g.clone() };
    let n = out.num_nodes;
    let degree: Vec<f64> = (0..n).map(|u| out.row(u).1.iter().sum()).collect();
    let isolated = degree.iter().filter(|&&d| d == 0.0).count();
    if isolated > 0 {
        log::warn!("{isolated} node(s) have zero degree; their normalized rows stay empty");
    }
    let factor: Vec<f64> = degree
        .iter()
        .map(|&d| {
            if d == 0.0 {
                0.0
            } else {
                match mode {
                    NormMode::Sym => 1.0 / d.sqrt(),
                    NormMode::Row => 1.0 / d,
                }
            }
        })
        .collect();
    for u in 0..n {
        let (lo, hi) = (out.row_offsets[u], out.row_offsets[u + 1]);
        for e in lo..hi {
            let v = out.col_indices[e] as usize;
            let scale = match mode {
                NormMode::Sym => factor[u] * factor[v],
                NormMode::Row => factor[u],
            };
            out.values[e] *= scale;
        }
    }
    out
}

/// Per-node class ids with [`UNLABELED`] for nodes outside the labeled set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledNodes {
    labels: Vec<u32>,
    num_classes: usize,
}

impl LabeledNodes {
    /// `num_classes` is derived as one past the largest label present.
    pub fn new(labels: Vec<u32>) -> Result<Self> {
        let num_classes = labels
            .iter()
            .filter(|&&l| l != UNLABELED)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0);
        Self::with_classes(labels, num_classes.max(2))
    }

    pub fn with_classes(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != UNLABELED && l as usize >= num_classes)
        {
            return Err(Error::Data(format!(
                "node {i} has label {l} outside [0, {num_classes})"
            )));
        }
        Ok(Self { labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn raw(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        match self.labels.get(node) {
            Some(&l) if l != UNLABELED => Some(l as usize),
            _ => None,
        }
    }

    /// Ids of all labeled nodes in increasing order.
    pub fn labeled_ids(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] != UNLABELED)
            .collect()
    }
}

/// Dense node features, row-major `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Data("feature dimension must be at least 1".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "feature payload has {} values, expected {rows} x {cols}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at node {}, column {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(g: &SparseGraph, labels: &LabeledNodes) -> Result<f64> {
    if labels.len() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.num_nodes()
        )));
    }
    let mut same = 0usize;
    let mut total = 0usize;
    for u in 0..g.num_nodes() {
        for &v in g.row(u).0 {
            let v = v as usize;
            if u == v {
                continue;
            }
            let lu = labels
                .get(u)
                .ok_or_else(|| Error::Data(format!("node {u} is unlabeled")))?;
            let lv = labels
                .get(v)
                .ok_or_else(|| Error::Data(format!("node {v} is unlabeled")))?;
            total += 1;
            same += usize::from(lu == lv);
        }
    }
    if total == 0 {
        return Err(Error::Data("graph has no edges".into()));
    }
    Ok(same as f64 / total as f64)
}

/// Disjoint train/validation/test node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(Error::Data("split parts must all be non-empty".into()));
        }
        let mut seen = vec![false; num_nodes];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= num_nodes {
                return Err(Error::Data(format!("split node {i} >= {num_nodes}")));
            }
            if seen[i] {
                return Err(Error::Data(format!("node {i} appears twice in split")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Maps positions `0..ids.len()` back to node ids.
    pub fn remap(&self, ids: &[usize]) -> Split {
        let m = |v: &[usize]| v.iter().map(|&i| ids[i]).collect();
        Split {
            train: m(&self.train),
            val: m(&self.val),
            test: m(&self.test),
        }
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.48,
            val: 0.32,
            test: 0.20,
        }
    }
}

/// `k` seeded random-permutation splits of `0..n`. Train and validation sizes
/// are floored; the remainder goes to test.
pub fn make_splits(n: usize, ratios: SplitRatios, seed: u64, k: usize) -> Result<Vec<Split>> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {sum}"
        )));
    }
    let n_train = (n as f64 * ratios.train).floor() as usize;
    let n_val = (n as f64 * ratios.val).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} nodes cannot give every split part at least one node"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let test = perm.split_off(n_train + n_val);
        let val = perm.split_off(n_train);
        out.push(Split { train: perm, val, test });
    }
    Ok(out)
}
