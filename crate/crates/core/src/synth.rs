//! Seeded synthetic graph generators for tests, benchmarks and experiments.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::seeds;

/// Generator descriptor. The textual form (`regular:6`, `er:0.1`, `barbell`,
/// `social:5451:2.5:0.4`) is accepted by [`FromStr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    /// Uniform-ish random `degree`-regular graph (pairing model).
    RandomRegular { degree: usize },
    /// Erdős–Rényi `G(n, p)`.
    ErdosRenyi { p: f64 },
    /// Two cliques of `n/2` nodes joined by a single bridge edge.
    Barbell,
    /// Connected heavy-tailed graph with exactly `edges` edges: a
    /// preferential spanning tree, then Chung–Lu edges with weights
    /// `∝ rank^(−1/(exponent−1))`, a fraction `closure` of which close
    /// triangles instead.
    Social {
        edges: usize,
        exponent: f64,
        closure: f64,
    },
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::RandomRegular { degree } => write!(f, "regular:{degree}"),
            GraphKind::ErdosRenyi { p } => write!(f, "er:{p}"),
            GraphKind::Barbell => write!(f, "barbell"),
            GraphKind::Social {
                edges,
                exponent,
                closure,
            } => write!(f, "social:{edges}:{exponent}:{closure}"),
        }
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::invalid(format!("unrecognized graph generator {s:?}"));
        let num =
            |i: usize| -> Result<f64> { parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(bad) };
        let int = |i: usize| -> Result<usize> {
            parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(bad)
        };
        match parts[0] {
            "regular" if parts.len() == 2 => Ok(GraphKind::RandomRegular { degree: int(1)? }),
            "er" if parts.len() == 2 => Ok(GraphKind::ErdosRenyi { p: num(1)? }),
            "barbell" if parts.len() == 1 => Ok(GraphKind::Barbell),
            "social" if parts.len() == 4 => Ok(GraphKind::Social {
                edges: int(1)?,
                exponent: num(2)?,
                closure: num(3)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Generate a graph of kind `kind` on `n` nodes. Same inputs, same graph.
pub fn synth_graph(kind: &GraphKind, n: usize, seed: u64) -> Result<SparseGraph> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 nodes, got {n}")));
    }
    match *kind {
        GraphKind::RandomRegular { degree } => random_regular(n, degree, seed),
        GraphKind::ErdosRenyi { p } => erdos_renyi(n, p, seed),
        GraphKind::Barbell => barbell(n),
        GraphKind::Social {
            edges,
            exponent,
            closure,
        } => social(n, edges, exponent, closure, seed),
    }
}

fn random_regular(n: usize, degree: usize, seed: u64) -> Result<SparseGraph> {
    if degree >= n || (n * degree) % 2 == 1 {
        return Err(Error::invalid(format!(
            "no simple {degree}-regular graph on {n} nodes"
        )));
    }
    let mut rng = seeds::rng(seed);
    'restart: for _ in 0..1000 {
        let mut stubs: Vec<usize> = (0..n)
            .flat_map(|v| std::iter::repeat_n(v, degree))
            .collect();
        let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(n * degree / 2);
        while !stubs.is_empty() {
            let mut placed = false;
            for _ in 0..10 * stubs.len() + 100 {
                let i = rng.gen_range(0..stubs.len());
                let j = rng.gen_range(0..stubs.len());
                let (u, v) = (stubs[i], stubs[j]);
                if i == j || u == v || edges.contains(&(u.min(v), u.max(v))) {
                    continue;
                }
                edges.insert((u.min(v), u.max(v)));
                let (hi, lo) = (i.max(j), i.min(j));
                stubs.swap_remove(hi);
                stubs.swap_remove(lo);
                placed = true;
                break;
            }
            if !placed {
                continue 'restart;
            }
        }
        let mut sorted: Vec<_> = edges.into_iter().collect();
        sorted.sort_unstable();
        return SparseGraph::from_edges(n, sorted);
    }
    Err(Error::invalid(format!(
        "failed to sample a {degree}-regular graph on {n} nodes"
    )))
}

fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<SparseGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "edge probability {p} not in [0, 1]"
        )));
    }
    let mut rng = seeds::rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}

fn barbell(n: usize) -> Result<SparseGraph> {
    if n % 2 == 1 {
        return Err(Error::invalid(format!(
            "barbell needs an even node count, got {n}"
        )));
    }
    let half = n / 2;
    let mut edges = Vec::new();
    for offset in [0, half] {
        for i in 0..half {
            for j in (i + 1)..half {
                edges.push((offset + i, offset + j));
            }
        }
    }
    edges.push((half - 1, half));
    SparseGraph::from_edges(n, edges)
}

fn social(n: usize, m: usize, exponent: f64, closure: f64, seed: u64) -> Result<SparseGraph> {
    if m < n - 1 || m > n * (n - 1) / 4 {
        return Err(Error::invalid(format!(
            "edge count {m} must lie in [{}, {}] for {n} nodes",
            n - 1,
            n * (n - 1) / 4
        )));
    }
    if !(exponent > 2.0) || !(0.0..1.0).contains(&closure) {
        return Err(Error::invalid(
            "exponent must exceed 2 and closure lie in [0, 1)",
        ));
    }
    let mut rng = seeds::rng(seed);
    let weights: Vec<f64> = (0..n)
        .map(|i| ((i + 1) as f64).powf(-1.0 / (exponent - 1.0)))
        .collect();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, limit: usize| -> usize {
        let x = rng.gen::<f64>() * cumulative[limit - 1];
        cumulative[..limit]
            .partition_point(|&c| c <= x)
            .min(limit - 1)
    };
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(m);
    let mut add = |u: usize, v: usize, adj: &mut Vec<Vec<usize>>| -> bool {
        if u == v || !seen.insert((u.min(v), u.max(v))) {
            return false;
        }
        adj[u].push(v);
        adj[v].push(u);
        true
    };
    for v in 1..n {
        let u = draw(&mut rng, v);
        add(u, v, &mut adj);
    }
    let mut count = n - 1;
    while count < m {
        let u = draw(&mut rng, n);
        let v = if rng.gen::<f64>() < closure && !adj[u].is_empty() {
            let mid = adj[u][rng.gen_range(0..adj[u].len())];
            adj[mid][rng.gen_range(0..adj[mid].len())]
        } else {
            draw(&mut rng, n)
        };
        if add(u, v, &mut adj) {
            count += 1;
        }
    }
    // Shuffle labels so that node index carries no degree information.
    let perm = crate::graph::GroundTruthPermutation::random(n, seeds::derive(seed, &[0x5eed]));
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(m);
    for (u, list) in adj.iter().enumerate() {
        for &v in list {
            if u < v {
                edges.push((perm.apply(u), perm.apply(v)));
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}
