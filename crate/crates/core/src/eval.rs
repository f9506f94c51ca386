//! Alignment quality: accuracy and matched neighborhood consistency (MNC).
//!
//! MNC of a source node `i` and a target node `j` is the Jaccard similarity
//! between the image of `i`'s neighbors under the alignment and `j`'s own
//! neighbors. It is undefined (`None`) when both sets are empty; such nodes
//! are left out of means and counted separately.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GroundTruthPermutation, SparseGraph};
use crate::matching::Alignment;

fn check_node(g: &SparseGraph, i: usize) -> Result<()> {
    if i >= g.n() {
        return Err(Error::NodeOutOfRange { index: i, n: g.n() });
    }
    Ok(())
}

fn mapped_neighborhood(g1: &SparseGraph, mapping: &[usize], i: usize) -> Vec<usize> {
    let mut mapped: Vec<usize> = g1.neighbors(i).iter().map(|&k| mapping[k]).collect();
    mapped.sort_unstable();
    mapped.dedup();
    mapped
}

fn jaccard_sorted(a: &[usize], b: &[usize]) -> Option<f64> {
    if a.is_empty() && b.is_empty() {
        return None;
    }
    let (mut x, mut y, mut inter) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                x += 1;
                y += 1;
            }
        }
    }
    Some(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// MNC of node `i` in `g1` and node `j` in `g2` under `pi`.
pub fn mnc(
    g1: &SparseGraph,
    g2: &SparseGraph,
    pi: &Alignment,
    i: usize,
    j: usize,
) -> Result<Option<f64>> {
    check_node(g1, i)?;
    check_node(g2, j)?;
    if pi.len() != g1.n() {
        return Err(Error::LengthMismatch {
            expected: g1.n(),
            got: pi.len(),
        });
    }
    for &k in g1.neighbors(i) {
        check_node(g2, pi.mapping[k])?;
    }
    Ok(jaccard_sorted(
        &mapped_neighborhood(g1, &pi.mapping, i),
        g2.neighbors(j),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: usize,
    pub matched: usize,
    pub mnc: Option<f64>,
    pub correct: bool,
    /// Degree in the source graph.
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeBucket {
    /// Lower degree bound (inclusive).
    pub lower: f64,
    /// Upper degree bound; inclusive only for the last bucket.
    pub upper: f64,
    pub upper_inclusive: bool,
    pub nodes: usize,
    pub correct_mnc: Vec<f64>,
    pub incorrect_mnc: Vec<f64>,
    pub undefined: usize,
}

impl DegreeBucket {
    pub fn mean_correct(&self) -> Option<f64> {
        mean(&self.correct_mnc)
    }

    pub fn mean_incorrect(&self) -> Option<f64> {
        mean(&self.incorrect_mnc)
    }
}

/// MNC distributions split by source degree into `[0, Δ/3)`, `[Δ/3, 2Δ/3)`
/// and `[2Δ/3, Δ]`, where `Δ` is the maximum degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeStrata {
    pub max_degree: usize,
    pub buckets: Vec<DegreeBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Mean MNC over nodes where it is defined; `None` if it never is.
    pub mean_mnc: Option<f64>,
    pub undefined_mnc: usize,
    pub per_node: Vec<NodeRecord>,
    pub degree_groups: DegreeStrata,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl EvalReport {
    /// Mean MNC over correctly (`true`) or incorrectly aligned nodes.
    pub fn mean_mnc_where(&self, correct: bool) -> Option<f64> {
        let xs: Vec<f64> = self
            .per_node
            .iter()
            .filter(|r| r.correct == correct)
            .filter_map(|r| r.mnc)
            .collect();
        mean(&xs)
    }

    /// Per-node CSV: `node,matched,mnc,correct,degree`; undefined MNC is empty.
    pub fn write_per_node_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["node", "matched", "mnc", "correct", "degree"])?;
        for r in &self.per_node {
            wtr.write_record([
                r.node.to_string(),
                r.matched.to_string(),
                r.mnc.map(|m| format!("{m}")).unwrap_or_default(),
                r.correct.to_string(),
                r.degree.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<per-node csv>", e))?;
        Ok(())
    }
}

/// Score `pi` against the ground truth: accuracy, per-node MNC at the matched
/// counterpart, and the degree-stratified breakdown.
pub fn evaluate(
    g1: &SparseGraph,
    g2: &SparseGraph,
    pi: &Alignment,
    truth: &GroundTruthPermutation,
) -> Result<EvalReport> {
    let n = g1.n();
    for got in [pi.len(), truth.len()] {
        if got != n {
            return Err(Error::LengthMismatch { expected: n, got });
        }
    }
    for (&m, &t) in pi.mapping.iter().zip(truth.as_slice()) {
        check_node(g2, m)?;
        check_node(g2, t)?;
    }
    let per_node: Vec<NodeRecord> = (0..n)
        .map(|i| {
            let j = pi.mapping[i];
            NodeRecord {
                node: i,
                matched: j,
                mnc: jaccard_sorted(&mapped_neighborhood(g1, &pi.mapping, i), g2.neighbors(j)),
                correct: j == truth.apply(i),
                degree: g1.degree(i),
            }
        })
        .collect();
    let correct = per_node.iter().filter(|r| r.correct).count();
    let defined: Vec<f64> = per_node.iter().filter_map(|r| r.mnc).collect();
    let mut report = EvalReport {
        accuracy: if n == 0 {
            0.0
        } else {
            correct as f64 / n as f64
        },
        mean_mnc: mean(&defined),
        undefined_mnc: n - defined.len(),
        per_node,
        degree_groups: DegreeStrata {
            max_degree: 0,
            buckets: Vec::new(),
        },
    };
    report.degree_groups = degree_stratified_mnc(&report, g1);
    Ok(report)
}

/// Split the report's nodes into three degree buckets of `g1`.
pub fn degree_stratified_mnc(report: &EvalReport, g1: &SparseGraph) -> DegreeStrata {
    let max_degree = g1.max_degree();
    let delta = max_degree as f64;
    let mut buckets: Vec<DegreeBucket> = (0..3)
        .map(|b| DegreeBucket {
            lower: delta * b as f64 / 3.0,
            upper: delta * (b + 1) as f64 / 3.0,
            upper_inclusive: b == 2,
            nodes: 0,
            correct_mnc: Vec::new(),
            incorrect_mnc: Vec::new(),
            undefined: 0,
        })
        .collect();
    for r in &report.per_node {
        let deg = g1.degree(r.node);
        // Integer comparisons avoid rounding at the cut points.
        let b = if 3 * deg < max_degree {
            0
        } else if 3 * deg < 2 * max_degree {
            1
        } else {
            2
        };
        let bucket = &mut buckets[b];
        bucket.nodes += 1;
        match (r.mnc, r.correct) {
            (None, _) => bucket.undefined += 1,
            (Some(m), true) => bucket.correct_mnc.push(m),
            (Some(m), false) => bucket.incorrect_mnc.push(m),
        }
    }
    DegreeStrata {
        max_degree,
        buckets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(leaves: usize) -> SparseGraph {
        SparseGraph::from_edges(leaves + 1, (1..=leaves).map(|l| (0, l))).unwrap()
    }

    #[test]
    fn jaccard_by_enumeration() {
        // Node 1 with neighbors {2,3,4}; its counterpart has {2,3,5}.
        let g1 = SparseGraph::from_edges(6, [(1, 2), (1, 3), (1, 4)]).unwrap();
        let g2 = SparseGraph::from_edges(6, [(1, 2), (1, 3), (1, 5)]).unwrap();
        let pi = Alignment::from_mapping((0..6).collect());
        assert_eq!(mnc(&g1, &g2, &pi, 1, 1).unwrap(), Some(0.5));
    }

    #[test]
    fn disjoint_and_undefined() {
        let g1 = SparseGraph::from_edges(4, [(0, 1)]).unwrap();
        let g2 = SparseGraph::from_edges(4, [(0, 2)]).unwrap();
        let pi = Alignment::from_mapping(vec![0, 1, 2, 3]);
        assert_eq!(mnc(&g1, &g2, &pi, 0, 0).unwrap(), Some(0.0));
        assert_eq!(mnc(&g1, &g2, &pi, 3, 3).unwrap(), None);
        assert!(mnc(&g1, &g2, &pi, 4, 0).is_err());
    }

    #[test]
    fn perfect_and_total_miss() {
        let g = SparseGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let truth = GroundTruthPermutation::identity(4);
        let r = evaluate(&g, &g, &Alignment::from_mapping(vec![0, 1, 2, 3]), &truth).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.mean_mnc, Some(1.0));
        let r = evaluate(&g, &g, &Alignment::from_mapping(vec![1, 2, 3, 0]), &truth).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn isolated_nodes_counted_as_undefined() {
        let g = SparseGraph::from_edges(4, [(0, 1)]).unwrap();
        let r = evaluate(
            &g,
            &g,
            &Alignment::from_mapping(vec![0, 1, 2, 3]),
            &GroundTruthPermutation::identity(4),
        )
        .unwrap();
        assert_eq!(r.undefined_mnc, 2);
        assert_eq!(r.mean_mnc, Some(1.0));
    }

    #[test]
    fn size_mismatch() {
        let g = star(3);
        let pi = Alignment::from_mapping(vec![0, 1, 2]);
        assert!(evaluate(&g, &g, &pi, &GroundTruthPermutation::identity(4)).is_err());
    }

    #[test]
    fn star_buckets() {
        let g = star(5);
        let r = evaluate(
            &g,
            &g,
            &Alignment::from_mapping((0..6).collect()),
            &GroundTruthPermutation::identity(6),
        )
        .unwrap();
        let strata = &r.degree_groups;
        assert_eq!(strata.max_degree, 5);
        assert_eq!(strata.buckets[0].nodes, 5);
        assert_eq!(strata.buckets[1].nodes, 0);
        assert_eq!(strata.buckets[2].nodes, 1);
    }

    #[test]
    fn regular_graph_all_in_top_bucket() {
        let cycle = SparseGraph::from_edges(7, (0..7).map(|i| (i, (i + 1) % 7))).unwrap();
        let r = evaluate(
            &cycle,
            &cycle,
            &Alignment::from_mapping((0..7).collect()),
            &GroundTruthPermutation::identity(7),
        )
        .unwrap();
        assert_eq!(r.degree_groups.buckets[2].nodes, 7);
        assert_eq!(
            r.degree_groups
                .buckets
                .iter()
                .map(|b| b.nodes)
                .sum::<usize>(),
            7
        );
    }

    #[test]
    fn per_node_csv() {
        let g = SparseGraph::from_edges(3, [(0, 1)]).unwrap();
        let r = evaluate(
            &g,
            &g,
            &Alignment::from_mapping(vec![0, 1, 2]),
            &GroundTruthPermutation::identity(3),
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_per_node_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(3).unwrap(), "2,2,,true,0");
    }
}
