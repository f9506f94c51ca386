#![allow(dead_code)]

use embalign::graph::SparseGraph;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))
}

/// Orthogonal factor of the QR decomposition of a random square matrix.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    uniform(d, d, rng).qr().q()
}

pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> SparseGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    SparseGraph::from_edges(n, edges).unwrap()
}

/// Nearest row of `points` to `q` by linear scan, lowest index on ties.
pub fn brute_nearest(points: &DMatrix<f64>, q: &[f64]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for i in 0..points.nrows() {
        let d2: f64 = points
            .row(i)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// Minimum-cost assignment by exhaustive enumeration.
pub fn brute_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    permutations(cost.nrows())
        .into_iter()
        .map(|p| {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            (p, c)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// NetMF matrix from dense matrix powers.
pub fn dense_netmf(g: &SparseGraph, window: usize, negative: f64) -> DMatrix<f64> {
    let n = g.n();
    let a = g.to_dense();
    let dinv = DMatrix::from_fn(n, n, |i, j| {
        if i == j && g.degree(i) > 0 {
            1.0 / g.degree(i) as f64
        } else {
            0.0
        }
    });
    let p = &dinv * &a;
    let mut power = DMatrix::identity(n, n);
    let mut sum = DMatrix::zeros(n, n);
    for _ in 0..window {
        power = &power * &p;
        sum += &power;
    }
    let vol = g.volume() as f64;
    let m = sum * dinv * (vol / (window as f64 * negative));
    m.map(|x| x.max(1.0).ln())
}

/// Largest absolute entry of `a − b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Flip each column of `b` to best agree with `a`, then compare.
pub fn max_abs_diff_up_to_sign(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..a.ncols() {
        let s = if a.column(c).dot(&b.column(c)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        let d = (a.column(c) - b.column(c) * s).abs().max();
        worst = worst.max(d);
    }
    worst
}
