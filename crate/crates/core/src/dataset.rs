//! On-disk dataset layout.
//!
//! A dataset directory holds:
//!
//! * `edges.tsv`: `src<TAB>dst` per line, zero-based ids, `#` comments.
//! * `features.bin`: `HGF1`, u64 LE `N`, u64 LE `d`, then `N*d` f32 LE, row-major.
//! * `labels.tsv`: `node<TAB>class` per line; missing nodes are unlabeled.
//! * optionally `splits.json` or `splits/*.json` with `train`/`val`/`test` arrays.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, LabeledNodes, SparseGraph, Split, UNLABELED};

pub const FEATURE_MAGIC: &[u8; 4] = b"HGF1";

/// Graph, features and labels of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: SparseGraph,
    pub features: FeatureMatrix,
    pub labels: LabeledNodes,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

/// Loads `edges.tsv`, `features.bin` and `labels.tsv` from `dir`. Edges are
/// symmetrized and deduplicated; self-loops are dropped.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let features = read_features(dir.join("features.bin"))?;
    let n = features.rows();
    let edges = read_edges(dir.join("edges.tsv"), n)?;
    let graph = SparseGraph::from_edges(n, &edges, true)?;
    let labels = read_labels(dir.join("labels.tsv"), n)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(Dataset {
        name,
        graph,
        features,
        labels,
    })
}

pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_edges(dir.join("edges.tsv"), &ds.graph.undirected_edges())?;
    write_features(dir.join("features.bin"), &ds.features)?;
    write_labels(dir.join("labels.tsv"), &ds.labels)?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn data_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>>> {
    let reader = BufReader::new(open(path)?);
    let path = path.to_path_buf();
    Ok(reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t.to_string())))
            }
        }
        Err(e) => Some(Err(Error::io(&path, e))),
    }))
}

fn parse_pair(path: &Path, line_no: usize, line: &str, what: &str) -> Result<(usize, usize)> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg,
    };
    let mut parts = line.split_whitespace();
    let (a, b) = match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => (a, b),
        _ => return Err(bad(format!("expected two tab-separated {what} fields, got {line:?}"))),
    };
    let a = a
        .parse()
        .map_err(|_| bad(format!("not a non-negative integer: {a:?}")))?;
    let b = b
        .parse()
        .map_err(|_| bad(format!("not a non-negative integer: {b:?}")))?;
    Ok((a, b))
}

pub fn read_edges(path: impl AsRef<Path>, num_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let mut edges = Vec::new();
    for item in data_lines(path)? {
        let (line_no, line) = item?;
        let (u, v) = parse_pair(path, line_no, &line, "node id")?;
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("node id {} >= N = {num_nodes}", u.max(v)),
            });
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edges(path: impl AsRef<Path>, edges: &[(usize, usize)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(create(path)?);
    for &(u, v) in edges {
        writeln!(w, "{u}\t{v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>, num_nodes: usize) -> Result<LabeledNodes> {
    let path = path.as_ref();
    let mut labels = vec![UNLABELED; num_nodes];
    for item in data_lines(path)? {
        let (line_no, line) = item?;
        let (node, class) = parse_pair(path, line_no, &line, "node/class")?;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if node >= num_nodes {
            return Err(err(format!("node id {node} >= N = {num_nodes}")));
        }
        if class >= UNLABELED as usize {
            return Err(err(format!("class id {class} out of range")));
        }
        labels[node] = class as u32;
    }
    LabeledNodes::new(labels)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabeledNodes) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(create(path)?);
    for (i, &l) in labels.raw().iter().enumerate() {
        if l != UNLABELED {
            writeln!(w, "{i}\t{l}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = open(path)?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, len)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected HGF1",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let n = read_u64(&mut r, path, len)?;
    let d = read_u64(&mut r, path, len)?;
    let payload = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("{}: header size overflows", path.display())))?;
    let expected = 20 + payload;
    if len < expected {
        return Err(Error::Truncated { expected, found: len });
    }
    if len > expected {
        return Err(Error::Format(format!(
            "{}: header claims {n} x {d} but file has {} trailing bytes",
            path.display(),
            len - expected
        )));
    }
    let data = read_f32s(&mut r, (n * d) as usize, path)?;
    FeatureMatrix::new(n as usize, d as usize, data)
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    write_matrix(path, features.rows(), features.cols(), features.data())
}

/// Writes any row-major f32 matrix in the `HGF1` layout.
pub fn write_matrix(path: impl AsRef<Path>, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    debug_assert_eq!(rows * cols, data.len());
    let mut w = BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&(rows as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(cols as u64).to_le_bytes()).map_err(io)?;
    for x in data {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, len: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                expected: buf.len() as u64,
                found: len,
            }
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn read_u64(r: &mut impl Read, path: &Path, len: u64) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path, len)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; 1 << 16];
    let mut remaining = count * 4;
    while remaining > 0 {
        let take = remaining.min(buf.len());
        r.read_exact(&mut buf[..take]).map_err(|e| Error::io(path, e))?;
        out.extend(
            buf[..take]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        remaining -= take;
    }
    Ok(out)
}

pub fn read_split(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_split(path: impl AsRef<Path>, split: &Split) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(split).expect("split serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Explicit splits shipped with a dataset: `splits/*.json` in name order, or a
/// single `splits.json`. Returns an empty list when neither exists.
pub fn read_dataset_splits(dir: impl AsRef<Path>) -> Result<Vec<Split>> {
    let dir = dir.as_ref();
    let sub = dir.join("splits");
    if sub.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        return files.iter().map(read_split).collect();
    }
    let single = dir.join("splits.json");
    if single.is_file() {
        return Ok(vec![read_split(single)?]);
    }
    Ok(Vec::new())
}
