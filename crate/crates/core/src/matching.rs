//! Node matching by nearest-neighbor search in the aligned embedding space.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::otlin::{self, OrthogonalTransform};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact k-d tree over the rows of a matrix under Euclidean distance.
///
/// Equal distances are broken toward the lower row index, so results are
/// identical to a linear scan that keeps the first minimum.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn new(y: &DMatrix<f64>) -> Self {
        let (n, dim) = y.shape();
        let mut points = Vec::with_capacity(n * dim);
        for i in 0..n {
            points.extend(y.row(i).iter());
        }
        let mut tree = KdTree {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE || self.dim == 0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut axis = 0;
        let mut spread = -1.0;
        for a in 0..self.dim {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let v = self.points[i * self.dim + a];
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > spread {
                spread = hi - lo;
                axis = a;
            }
        }
        if spread <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + axis]
                .total_cmp(&points[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest rows to `query` as `(row, euclidean distance)`, closest
    /// first.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(0, query, k, &mut best);
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        self.knn(query, 1).into_iter().next()
    }

    fn search(&self, node: usize, query: &[f64], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (sq_dist(query, self.point(i)), i);
                    if best.len() < k || lex_lt(cand, best[best.len() - 1]) {
                        let pos = best.partition_point(|&b| lex_lt(b, cand));
                        best.insert(pos, cand);
                        best.truncate(k);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, query, k, best);
                }
            }
        }
    }
}

fn lex_lt(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Spatial index over the rows of `y`.
pub fn build_index(y: &EmbeddingMatrix) -> KdTree {
    KdTree::new(y.values())
}

/// Node correspondence from the first graph into the second.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    /// `mapping[i]` is the node of the second graph matched to node `i`.
    pub mapping: Vec<usize>,
    /// Euclidean distance between `i`'s transformed embedding and its match.
    pub distances: Vec<f64>,
    /// Ranked candidates per node, when more than one was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<Vec<Vec<usize>>>,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// Alignment without distance information, for scoring externally produced maps.
    pub fn from_mapping(mapping: Vec<usize>) -> Self {
        let distances = vec![0.0; mapping.len()];
        Alignment {
            mapping,
            distances,
            top_k: None,
        }
    }

    /// CSV with columns `source_index,target_index,distance`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["source_index", "target_index", "distance"])?;
        for (i, (&j, &d)) in self.mapping.iter().zip(&self.distances).enumerate() {
            wtr.write_record([i.to_string(), j.to_string(), format!("{d:.17e}")])?;
        }
        wtr.flush().map_err(|e| Error::io("<alignment>", e))?;
        Ok(())
    }

    /// Read the CSV written by [`Alignment::write_csv`]. The distance column
    /// is optional; rows may come in any order but must cover `0..len`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse {
                    line: line + 2,
                    message: format!("missing column {k}"),
                })
            };
            let parse_err = |m: String| Error::Parse {
                line: line + 2,
                message: m,
            };
            let i = field(0)?
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            let j = field(1)?
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            let d = match rec.get(2) {
                Some(s) if !s.trim().is_empty() => {
                    s.trim().parse().map_err(|e| parse_err(format!("{e}")))?
                }
                _ => 0.0,
            };
            rows.push((i, j, d));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
            return Err(Error::invalid(
                "alignment rows must cover source indices 0..n exactly once",
            ));
        }
        Ok(Alignment {
            mapping: rows.iter().map(|r| r.1).collect(),
            distances: rows.iter().map(|r| r.2).collect(),
            top_k: None,
        })
    }

    /// Top-k candidate lists as a JSON array of arrays, or `null`.
    pub fn write_top_k_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &self.top_k)?;
        Ok(())
    }
}

fn transformed(
    y1: &EmbeddingMatrix,
    q: &OrthogonalTransform,
    y2: &EmbeddingMatrix,
) -> Result<DMatrix<f64>> {
    if y1.dim() != y2.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions {} and {}",
            y1.dim(),
            y2.dim()
        )));
    }
    if y2.n() == 0 {
        return Err(Error::ShapeMismatch("target embedding is empty".into()));
    }
    Ok(q.apply(y1)?.into_inner())
}

/// Match every row of `Y₁Q` to its nearest row of `Y₂`. Several source nodes
/// may share a target.
pub fn greedy_match(
    y1: &EmbeddingMatrix,
    q: &OrthogonalTransform,
    y2: &EmbeddingMatrix,
    k: usize,
) -> Result<Alignment> {
    if k == 0 {
        return Err(Error::invalid("candidate count must be at least 1"));
    }
    let moved = transformed(y1, q, y2)?;
    let tree = build_index(y2);
    let rows: Vec<Vec<(usize, f64)>> = (0..moved.nrows())
        .into_par_iter()
        .map(|i| {
            let query: Vec<f64> = moved.row(i).iter().copied().collect();
            tree.knn(&query, k)
        })
        .collect();
    let mapping = rows.iter().map(|r| r[0].0).collect();
    let distances = rows.iter().map(|r| r[0].1).collect();
    let top_k = (k > 1).then(|| {
        rows.iter()
            .map(|r| r.iter().map(|&(j, _)| j).collect())
            .collect()
    });
    Ok(Alignment {
        mapping,
        distances,
        top_k,
    })
}

/// One-to-one alignment: Sinkhorn on squared distances between `Y₁Q` and
/// `Y₂`, rounded greedily to a permutation. Requires equal node counts.
pub fn bijective_match(
    y1: &EmbeddingMatrix,
    q: &OrthogonalTransform,
    y2: &EmbeddingMatrix,
    lambda: f64,
    max_iter: usize,
) -> Result<Alignment> {
    let moved = transformed(y1, q, y2)?;
    if moved.nrows() != y2.n() {
        return Err(Error::ShapeMismatch(format!(
            "bijective matching needs equal sizes, got {} and {}",
            moved.nrows(),
            y2.n()
        )));
    }
    let n = moved.nrows();
    let target = y2.values();
    let cost = DMatrix::from_fn(n, n, |i, j| (moved.row(i) - target.row(j)).norm_squared());
    let plan = otlin::sinkhorn(&cost, lambda, max_iter, 1e-6)?;
    let mapping = plan.round_to_assignment();
    let distances = mapping
        .iter()
        .enumerate()
        .map(|(i, &j)| (moved.row(i) - target.row(j)).norm())
        .collect();
    Ok(Alignment {
        mapping,
        distances,
        top_k: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> EmbeddingMatrix {
        EmbeddingMatrix::new(DMatrix::from_fn(rows, cols, f)).unwrap()
    }

    #[test]
    fn self_query_finds_self() {
        let y = emb(2, 2, |i, j| (i * 2 + j) as f64);
        let t = build_index(&y);
        assert_eq!(t.nearest(&[0.0, 1.0]).unwrap().0, 0);
        assert_eq!(t.nearest(&[2.0, 3.0]).unwrap().0, 1);
    }

    #[test]
    fn duplicates_break_to_lowest_index() {
        let y = emb(40, 2, |i, _| (i % 4) as f64);
        let t = build_index(&y);
        let hits = t.knn(&[2.0, 2.0], 3);
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![2, 6, 10]);
    }

    #[test]
    fn exact_copy_maps_to_identity() {
        let y = emb(30, 4, |i, j| {
            ((i * 7 + j * 13) % 17) as f64 + i as f64 * 0.01
        });
        let a = greedy_match(&y, &OrthogonalTransform::identity(4), &y, 3).unwrap();
        assert_eq!(a.mapping, (0..30).collect::<Vec<_>>());
        assert!(a.distances.iter().all(|&d| d == 0.0));
        assert_eq!(a.top_k.as_ref().unwrap()[5][0], 5);
    }

    #[test]
    fn bijective_mode_is_a_permutation() {
        let y = emb(12, 3, |i, j| {
            ((i * 5 + j * 3) % 7) as f64 * 0.1 + i as f64 * 0.001
        });
        let a = bijective_match(&y, &OrthogonalTransform::identity(3), &y, 1e-3, 2000).unwrap();
        let mut seen = a.mapping.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn shape_and_k_errors() {
        let a = emb(5, 3, |i, j| (i + j) as f64);
        let b = emb(5, 2, |i, j| (i + j) as f64);
        assert!(greedy_match(&a, &OrthogonalTransform::identity(3), &b, 1).is_err());
        assert!(greedy_match(&a, &OrthogonalTransform::identity(3), &a, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let a = Alignment {
            mapping: vec![1, 0],
            distances: vec![0.5, 0.25],
            top_k: None,
        };
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "source_index,target_index,distance");
        assert!(lines[1].starts_with("0,1,5.0"));
        let mut js = Vec::new();
        a.write_top_k_json(&mut js).unwrap();
        assert_eq!(js, b"null");
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(Alignment::read_csv(&buf[..]).unwrap(), a);
        assert!(Alignment::read_csv(&b"source_index,target_index\n1,0\n"[..]).is_err());
    }
}
