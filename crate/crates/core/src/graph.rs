//! Undirected, unweighted graphs and the noisy-permutation generator.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;

/// Symmetric adjacency in compressed sparse row form.
///
/// Neighbor lists are sorted and contain no duplicates or self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    labels: Option<Vec<String>>,
}

impl SparseGraph {
    /// Build from unordered node pairs. Duplicates collapse and self-loops are
    /// dropped; indices must lie in `[0, n)`.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, v) in edges {
            for idx in [u, v] {
                if idx >= n {
                    return Err(Error::NodeOutOfRange { index: idx, n });
                }
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok(SparseGraph {
            offsets,
            neighbors,
            labels: None,
        })
    }

    /// Graph on `n` nodes with no edges.
    pub fn empty(n: usize) -> Self {
        SparseGraph {
            offsets: vec![0; n + 1],
            neighbors: Vec::new(),
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// External labels, when the graph came from a file.
    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.degree(i)).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Sum of degrees, i.e. twice the edge count.
    pub fn volume(&self) -> usize {
        self.neighbors.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n() && j < self.n() && self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in self.neighbors(i) {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// `A · X` for a dense `X` with `n` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n(), "row count must match node count");
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            let src = x.column(c);
            let mut dst = out.column_mut(c);
            for i in 0..self.n() {
                dst[i] = self.neighbors(i).iter().map(|&j| src[j]).sum();
            }
        }
        out
    }

    /// `X · A` for a dense `X` with `n` columns.
    pub fn rmul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.n(), "column count must match node count");
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        // A is symmetric: column j of X·A is the sum of X's columns over N(j).
        for j in 0..self.n() {
            let mut dst = out.column_mut(j);
            for &k in self.neighbors(j) {
                dst += x.column(k);
            }
        }
        out
    }

    /// Stable content hash over the node count and sorted edge list.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for (i, j) in self.edges() {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write as a whitespace-separated edge list, one edge per line.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "% {} nodes, {} edges", self.n(), self.num_edges())?;
        for (i, j) in self.edges() {
            writeln!(w, "{} {}", self.label(i), self.label(j))?;
        }
        Ok(())
    }
}

/// How tokens are separated on each line of an edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EdgeListFormat {
    /// Whitespace or commas, whichever appears.
    #[default]
    Auto,
    Whitespace,
    Comma,
}

impl EdgeListFormat {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            EdgeListFormat::Whitespace => line.split_whitespace().collect(),
            EdgeListFormat::Comma => line
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .collect(),
            EdgeListFormat::Auto => line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect(),
        }
    }
}

/// Read an edge list file. When every node identifier is a non-negative
/// integer it is used as the node index directly; otherwise labels are mapped
/// to dense indices in order of first appearance. Extra columns (weights,
/// timestamps) are ignored.
pub fn load_edge_list(path: impl AsRef<Path>, format: EdgeListFormat) -> Result<SparseGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(file, format)
}

pub fn parse_edge_list<R: Read>(reader: R, format: EdgeListFormat) -> Result<SparseGraph> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let toks = format.split(trimmed);
        if toks.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected two node identifiers, found {:?}", trimmed),
            });
        }
        pairs.push((toks[0].to_string(), toks[1].to_string()));
    }

    let numeric: Option<Vec<(usize, usize)>> = pairs
        .iter()
        .map(|(u, v)| Some((u.parse().ok()?, v.parse().ok()?)))
        .collect();
    let g = match numeric {
        Some(edges) => {
            let n = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
            SparseGraph::from_edges(n, edges)?
        }
        None => {
            let mut index: HashMap<String, usize> = HashMap::new();
            let mut labels: Vec<String> = Vec::new();
            let mut intern = |tok: &str| -> usize {
                if let Some(&i) = index.get(tok) {
                    return i;
                }
                let i = labels.len();
                index.insert(tok.to_string(), i);
                labels.push(tok.to_string());
                i
            };
            let edges: Vec<(usize, usize)> =
                pairs.iter().map(|(u, v)| (intern(u), intern(v))).collect();
            SparseGraph::from_edges(labels.len(), edges)?.with_labels(labels)?
        }
    };
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    Ok(g)
}

/// A bijection on `[0, n)`: node `i` of the source graph corresponds to node
/// `perm[i]` of the permuted graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthPermutation {
    perm: Vec<usize>,
    seed: Option<u64>,
}

impl GroundTruthPermutation {
    pub fn identity(n: usize) -> Self {
        GroundTruthPermutation {
            perm: (0..n).collect(),
            seed: None,
        }
    }

    pub fn random(n: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeds::rng(seed));
        GroundTruthPermutation {
            perm,
            seed: Some(seed),
        }
    }

    pub fn from_vec(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n {
                return Err(Error::NotAPermutation(format!(
                    "{p} out of range for length {n}"
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::NotAPermutation(format!("{p} appears twice")));
            }
        }
        Ok(GroundTruthPermutation { perm, seed: None })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        GroundTruthPermutation {
            perm: inv,
            seed: None,
        }
    }

    /// Extend to `n` nodes, fixing the added indices.
    pub fn padded(&self, n: usize) -> Self {
        let mut perm = self.perm.clone();
        perm.extend(self.perm.len()..n.max(self.perm.len()));
        GroundTruthPermutation {
            perm,
            seed: self.seed,
        }
    }

    /// Two-column CSV: `source_index,target_index`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["source_index", "target_index"])?;
        for (i, &p) in self.perm.iter().enumerate() {
            wtr.write_record([i.to_string(), p.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |idx: usize| -> Result<usize> {
                rec.get(idx)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: k + 2,
                        message: format!("bad permutation record {:?}", rec),
                    })
            };
            pairs.push((parse(0)?, parse(1)?));
        }
        let n = pairs.len();
        let mut perm = vec![usize::MAX; n];
        for (s, t) in pairs {
            if s >= n {
                return Err(Error::NotAPermutation(format!("source {s} out of range")));
            }
            perm[s] = t;
        }
        Self::from_vec(perm)
    }
}

/// Relabel node `i` as `perm[i]`; the adjacency becomes `P̄ A P̄ᵀ`.
pub fn permute_graph(g: &SparseGraph, perm: &GroundTruthPermutation) -> Result<SparseGraph> {
    if perm.len() != g.n() {
        return Err(Error::LengthMismatch {
            expected: g.n(),
            got: perm.len(),
        });
    }
    let out = SparseGraph::from_edges(
        g.n(),
        g.edges().map(|(i, j)| (perm.apply(i), perm.apply(j))),
    )?;
    match g.labels() {
        Some(labels) => {
            let mut relabeled = vec![String::new(); g.n()];
            for (i, l) in labels.iter().enumerate() {
                relabeled[perm.apply(i)] = l.clone();
            }
            out.with_labels(relabeled)
        }
        None => Ok(out),
    }
}

/// Remove each undirected edge independently with probability `p`.
///
/// One uniform draw is taken per edge in [`SparseGraph::edges`] order and the
/// edge is kept when the draw is at least `p`. With a fixed seed the removed
/// sets are therefore nested as `p` grows.
pub fn drop_edges(g: &SparseGraph, p: f64, seed: u64) -> Result<SparseGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "edge removal probability {p} not in [0, 1]"
        )));
    }
    let mut rng = seeds::rng(seed);
    let kept: Vec<(usize, usize)> = g.edges().filter(|_| rng.gen::<f64>() >= p).collect();
    let out = SparseGraph::from_edges(g.n(), kept)?;
    match g.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}

/// Add isolated nodes until the graph has `n_target` nodes.
pub fn pad_to_size(g: &SparseGraph, n_target: usize) -> Result<SparseGraph> {
    if n_target < g.n() {
        return Err(Error::invalid(format!(
            "cannot pad a {}-node graph down to {n_target} nodes",
            g.n()
        )));
    }
    let out = SparseGraph::from_edges(n_target, g.edges())?;
    match g.labels() {
        Some(l) => {
            let mut labels = l.to_vec();
            labels.extend((g.n()..n_target).map(|i| format!("__pad{i}")));
            out.with_labels(labels)
        }
        None => Ok(out),
    }
}
