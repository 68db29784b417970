//! Multi-hop feature pre-computation and the hop cache file.
//!
//! Hop `l` of a node is row `i` of `Â^l X`, produced by iterated sparse-dense
//! products; powers of `Â` are never formed. The resulting [`HopTensor`] is
//! the only input the model and the training loop see.
//!
//! Cache layout (`HGH1`): magic, u64 LE `N`, `L+1`, `d`, then `N*(L+1)*d`
//! f32 LE in `[node][hop][dim]` order, then the first 16 bytes of the
//! SHA-256 of everything before it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{read_exact, read_f32s, read_u64};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, SparseGraph};
use crate::tensor::Tensor;

pub const HOP_MAGIC: &[u8; 4] = b"HGH1";
const HEADER_BYTES: u64 = 4 + 3 * 8;
const CHECKSUM_BYTES: u64 = 16;

/// Per-node stack of propagated features, `[node][hop][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopTensor {
    num_nodes: usize,
    num_hops: usize,
    dim: usize,
    data: Vec<f32>,
}

impl HopTensor {
    pub fn new(num_nodes: usize, num_hops: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if num_hops == 0 || dim == 0 {
            return Err(Error::Shape(
                "hop tensor needs at least one hop and one dimension".into(),
            ));
        }
        if data.len() != num_nodes * num_hops * dim {
            return Err(Error::Shape(format!(
                "hop payload has {} values, expected {num_nodes} x {num_hops} x {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("hop tensor contains non-finite values".into()));
        }
        Ok(Self {
            num_nodes,
            num_hops,
            dim,
            data,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// `L + 1`: the raw features plus `L` propagated hops.
    pub fn num_hops(&self) -> usize {
        self.num_hops
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// All hops of one node, `(L+1) * d` values.
    pub fn node(&self, i: usize) -> &[f32] {
        let stride = self.num_hops * self.dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn hop(&self, node: usize, hop: usize) -> &[f32] {
        let start = (node * self.num_hops + hop) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Copies hop `l` of every node into an `N x d` matrix.
    pub fn hop_slice(&self, hop: usize) -> FeatureMatrix {
        let mut out = Vec::with_capacity(self.num_nodes * self.dim);
        for i in 0..self.num_nodes {
            out.extend_from_slice(self.hop(i, hop));
        }
        FeatureMatrix::new(self.num_nodes, self.dim, out).expect("finite by construction")
    }

    /// Keeps hops `0..num_hops`; no propagation is repeated.
    pub fn truncate(&self, num_hops: usize) -> Result<HopTensor> {
        if num_hops == 0 || num_hops > self.num_hops {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {num_hops} of {} hops",
                self.num_hops
            )));
        }
        let mut data = Vec::with_capacity(self.num_nodes * num_hops * self.dim);
        for i in 0..self.num_nodes {
            data.extend_from_slice(&self.node(i)[..num_hops * self.dim]);
        }
        Ok(HopTensor {
            num_nodes: self.num_nodes,
            num_hops,
            dim: self.dim,
            data,
        })
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * 4
    }
}

fn check_rows(g: &SparseGraph, rows: usize) -> Result<()> {
    if g.num_nodes() != rows {
        return Err(Error::Shape(format!(
            "graph has {} nodes but the feature matrix has {rows} rows",
            g.num_nodes()
        )));
    }
    Ok(())
}

/// Row-parallel `out = g * x` with 64-bit accumulation. Each output row is
/// summed in column-index order by exactly one worker, so the result does not
/// depend on the thread count.
fn spmm_into(g: &SparseGraph, x: &[f64], d: usize, out: &mut [f64]) {
    out.par_chunks_mut(d).enumerate().for_each(|(u, row)| {
        row.fill(0.0);
        let (cols, vals) = g.row(u);
        for (&v, &w) in cols.iter().zip(vals) {
            let src = &x[v as usize * d..(v as usize + 1) * d];
            for (o, &s) in row.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    });
}

/// Sparse-dense product `g * x`.
pub fn spmm(g: &SparseGraph, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    check_rows(g, x.rows())?;
    let d = x.cols();
    let src: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0f64; src.len()];
    spmm_into(g, &src, d, &mut out);
    FeatureMatrix::new(x.rows(), d, out.into_iter().map(|v| v as f32).collect())
}

/// Bytes needed for an `N x (L+1) x d` f32 hop tensor, or an error if that
/// cannot be allocated on this platform.
pub fn planned_bytes(num_nodes: usize, hops: usize, dim: usize) -> Result<usize> {
    let bytes = num_nodes as u128 * (hops as u128 + 1) * dim as u128 * 4;
    if bytes > isize::MAX as u128 {
        return Err(Error::AllocationTooLarge {
            what: "hop tensor",
            bytes,
        });
    }
    Ok(bytes as usize)
}

/// Stacks `[X, ÂX, ..., Â^L X]`. The running product is kept in 64-bit and
/// rounded to f32 once per hop.
pub fn precompute_hops(g: &SparseGraph, x: &FeatureMatrix, hops: usize) -> Result<HopTensor> {
    check_rows(g, x.rows())?;
    planned_bytes(x.rows(), hops, x.cols())?;
    let (n, d, k) = (x.rows(), x.cols(), hops + 1);
    let mut data = vec![0.0f32; n * k * d];
    let mut cur: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut next = vec![0.0f64; cur.len()];
    scatter_hop(&mut data, &cur, 0, k, d);
    for l in 1..k {
        spmm_into(g, &cur, d, &mut next);
        std::mem::swap(&mut cur, &mut next);
        scatter_hop(&mut data, &cur, l, k, d);
    }
    HopTensor::new(n, k, d, data)
}

fn scatter_hop(data: &mut [f32], hop: &[f64], l: usize, k: usize, d: usize) {
    data.par_chunks_mut(k * d).enumerate().for_each(|(i, node)| {
        for (o, &v) in node[l * d..(l + 1) * d].iter_mut().zip(&hop[i * d..(i + 1) * d]) {
            *o = v as f32;
        }
    });
}

/// Copies the hop stacks of `ids` (duplicates allowed) into a `b x (L+1) x d`
/// tensor.
pub fn gather_batch(h: &HopTensor, ids: &[usize]) -> Result<Tensor<f32>> {
    let stride = h.num_hops * h.dim;
    let mut data = Vec::with_capacity(ids.len() * stride);
    for &i in ids {
        if i >= h.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "node id {i} out of range for {} nodes",
                h.num_nodes
            )));
        }
        data.extend_from_slice(h.node(i));
    }
    Tensor::new(vec![ids.len(), h.num_hops, h.dim], data)
}

fn header_bytes(n: u64, k: u64, d: u64) -> [u8; HEADER_BYTES as usize] {
    let mut b = [0u8; HEADER_BYTES as usize];
    b[..4].copy_from_slice(HOP_MAGIC);
    b[4..12].copy_from_slice(&n.to_le_bytes());
    b[12..20].copy_from_slice(&k.to_le_bytes());
    b[20..28].copy_from_slice(&d.to_le_bytes());
    b
}

/// Sequential writer for hop caches too large to hold in memory.
pub struct HopCacheWriter {
    path: PathBuf,
    out: BufWriter<File>,
    hasher: Sha256,
    row_len: usize,
    rows_left: u64,
}

impl HopCacheWriter {
    pub fn create(path: impl AsRef<Path>, num_nodes: usize, num_hops: usize, dim: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let header = header_bytes(num_nodes as u64, num_hops as u64, dim as u64);
        out.write_all(&header).map_err(|e| Error::io(&path, e))?;
        let mut hasher = Sha256::new();
        hasher.update(header);
        Ok(Self {
            path,
            out,
            hasher,
            row_len: num_hops * dim,
            rows_left: num_nodes as u64,
        })
    }

    /// Appends one node's `(L+1) * d` values.
    pub fn write_node(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.row_len || self.rows_left == 0 {
            return Err(Error::Shape(format!(
                "expected a row of {} values with {} rows left",
                self.row_len, self.rows_left
            )));
        }
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.hasher.update(&buf);
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.rows_left -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.rows_left != 0 {
            return Err(Error::Shape(format!("{} node rows were never written", self.rows_left)));
        }
        let digest = self.hasher.finalize();
        self.out
            .write_all(&digest[..CHECKSUM_BYTES as usize])
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn save_hops(h: &HopTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = HopCacheWriter::create(path, h.num_nodes, h.num_hops, h.dim)?;
    for i in 0..h.num_nodes {
        w.write_node(h.node(i))?;
    }
    w.finish()
}

/// Random-access reader over a hop cache. Only the header is read on open;
/// [`HopCacheReader::gather`] seeks to the requested rows so a batch can be
/// served from a cache larger than memory.
pub struct HopCacheReader {
    path: PathBuf,
    file: File,
    num_nodes: usize,
    num_hops: usize,
    dim: usize,
}

impl HopCacheReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut magic = [0u8; 4];
        read_exact(&mut file, &mut magic, &path, len)?;
        if &magic != HOP_MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected HGH1",
                path.display(),
                String::from_utf8_lossy(&magic)
            )));
        }
        let n = read_u64(&mut file, &path, len)?;
        let k = read_u64(&mut file, &path, len)?;
        let d = read_u64(&mut file, &path, len)?;
        let payload = (n as u128) * (k as u128) * (d as u128) * 4;
        let expected = HEADER_BYTES as u128 + payload + CHECKSUM_BYTES as u128;
        if (len as u128) < expected {
            return Err(Error::Truncated {
                expected: expected.min(u64::MAX as u128) as u64,
                found: len,
            });
        }
        if (len as u128) > expected {
            return Err(Error::Format(format!(
                "{}: header says {n} x {k} x {d} but the file is {} bytes longer",
                path.display(),
                len as u128 - expected
            )));
        }
        if k == 0 || d == 0 {
            return Err(Error::Format(format!("{}: zero hops or dimension", path.display())));
        }
        Ok(Self {
            path,
            file,
            num_nodes: n as usize,
            num_hops: k as usize,
            dim: d as usize,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_hops(&self) -> usize {
        self.num_hops
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row_bytes(&self) -> u64 {
        (self.num_hops * self.dim * 4) as u64
    }

    /// Reads the stacks of `ids` straight from disk.
    pub fn gather(&mut self, ids: &[usize]) -> Result<Tensor<f32>> {
        let row = self.num_hops * self.dim;
        let mut data = Vec::with_capacity(ids.len() * row);
        let mut buf = vec![0u8; row * 4];
        for &i in ids {
            if i >= self.num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "node id {i} out of range for {} nodes",
                    self.num_nodes
                )));
            }
            self.file
                .seek(SeekFrom::Start(HEADER_BYTES + i as u64 * self.row_bytes()))
                .and_then(|_| self.file.read_exact(&mut buf))
                .map_err(|e| Error::io(&self.path, e))?;
            data.extend(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
        }
        Tensor::new(vec![ids.len(), self.num_hops, self.dim], data)
    }

    /// Streams the whole file through the checksum.
    pub fn verify(&mut self) -> Result<()> {
        self.file
            .seek(SeekFrom::Start(0))
            .map_err(|e| Error::io(&self.path, e))?;
        let total = HEADER_BYTES + self.num_nodes as u64 * self.row_bytes();
        let mut r = BufReader::new((&mut self.file).take(total));
        let mut hasher = Sha256::new();
        std::io::copy(&mut r, &mut hasher).map_err(|e| Error::io(&self.path, e))?;
        let mut stored = [0u8; CHECKSUM_BYTES as usize];
        self.file
            .read_exact(&mut stored)
            .map_err(|e| Error::io(&self.path, e))?;
        if hasher.finalize()[..CHECKSUM_BYTES as usize] != stored {
            return Err(Error::Checksum(self.path.clone()));
        }
        Ok(())
    }

    /// Loads the full tensor and checks the checksum.
    pub fn read_all(mut self) -> Result<HopTensor> {
        self.verify()?;
        self.file
            .seek(SeekFrom::Start(HEADER_BYTES))
            .map_err(|e| Error::io(&self.path, e))?;
        let count = self.num_nodes * self.num_hops * self.dim;
        let data = read_f32s(&mut BufReader::new(&mut self.file), count, &self.path)?;
        HopTensor::new(self.num_nodes, self.num_hops, self.dim, data)
    }
}

pub fn load_hops(path: impl AsRef<Path>) -> Result<HopTensor> {
    HopCacheReader::open(path)?.read_all()
}
