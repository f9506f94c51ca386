//! Optimal-transport and orthogonal-alignment kernels: entropic Sinkhorn,
//! orthogonal Procrustes, and the Frank–Wolfe linear-minimization step.
//!
//! Sinkhorn uses the temperature convention: the Gibbs kernel is
//! `exp(−cost/λ)`, so smaller `λ` gives sharper plans.

use nalgebra::{DMatrix, DVector};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// Once a scaling vector leaves `[e^-T, e^T]` it is folded into the dual
/// potentials and the kernel is rebuilt.
const ABSORB_THRESHOLD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub lambda: f64,
    pub max_iter: usize,
    /// Max-abs marginal residual at which iteration stops.
    pub tol: f64,
}

impl SinkhornParams {
    pub fn new(lambda: f64) -> Self {
        SinkhornParams {
            lambda,
            max_iter: 500,
            tol: 1e-6,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// A nonnegative coupling together with the marginals it was fitted to.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub values: DMatrix<f64>,
    pub row_marginal: DVector<f64>,
    pub col_marginal: DVector<f64>,
    pub row_residual: f64,
    pub col_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Negated dual objective after every full iteration. Block-coordinate
    /// ascent on the dual makes this non-increasing.
    pub objective_trace: Vec<f64>,
}

impl TransportPlan {
    /// Max-abs deviation of row and column sums from the stored marginals.
    pub fn marginal_residuals(&self) -> (f64, f64) {
        marginal_residuals(&self.values, &self.row_marginal, &self.col_marginal)
    }

    /// Greedy rounding to a one-to-one assignment: entries are visited in
    /// decreasing order (ties by row, then column) and taken when both their
    /// row and column are still free. Returns `assignment[row] = col`; rows
    /// left over when `n > m` get `usize::MAX`.
    pub fn round_to_assignment(&self) -> Vec<usize> {
        greedy_assignment(&self.values)
    }
}

fn marginal_residuals(p: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> (f64, f64) {
    let rows = p.column_sum();
    let cols = p.row_sum();
    let r = rows
        .iter()
        .zip(a.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    let c = cols
        .iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    (r, c)
}

pub(crate) fn greedy_assignment(p: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = p.shape();
    let mut entries: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    entries.sort_by(|&(i, j), &(k, l)| p[(k, l)].total_cmp(&p[(i, j)]).then((i, j).cmp(&(k, l))));
    let mut row_of = vec![usize::MAX; n];
    let mut col_used = vec![false; m];
    let mut left = n.min(m);
    for (i, j) in entries {
        if left == 0 {
            break;
        }
        if row_of[i] == usize::MAX && !col_used[j] {
            row_of[i] = j;
            col_used[j] = true;
            left -= 1;
        }
    }
    row_of
}

fn logsumexp(iter: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + iter.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Entropic OT with uniform marginals `1/n` and `1/m`.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    let a = DVector::from_element(n, 1.0 / n.max(1) as f64);
    let b = DVector::from_element(m, 1.0 / m.max(1) as f64);
    sinkhorn_with_marginals(
        cost,
        &a,
        &b,
        SinkhornParams {
            lambda,
            max_iter,
            tol,
        },
    )
}

/// Entropic OT between positive marginals `a` and `b` of equal total mass.
///
/// Runs alternating row/column scaling on a kernel built from stabilized
/// dual potentials. Scalings that grow past a threshold are absorbed into
/// the potentials; rows or columns whose kernel underflows entirely are
/// updated with an exact log-sum-exp step instead.
pub fn sinkhorn_with_marginals(
    cost: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    params: SinkhornParams,
) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::ShapeMismatch("cost matrix is empty".into()));
    }
    if a.len() != n || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "marginals of length {} and {} for a {n}x{m} cost",
            a.len(),
            b.len()
        )));
    }
    let lambda = params.lambda;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "regularization must be positive, got {lambda}"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("transport cost"));
    }
    if a.iter()
        .chain(b.iter())
        .any(|&x| !(x > 0.0 && x.is_finite()))
    {
        return Err(Error::invalid("marginals must be positive and finite"));
    }
    let (sa, sb) = (a.sum(), b.sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::invalid(format!(
            "marginal masses differ: {sa} vs {sb}"
        )));
    }

    let ln_a = a.map(f64::ln);
    let ln_b = b.map(f64::ln);
    // Potentials start at row minima, then column minima of the remainder, so
    // every kernel entry is at most 1 and each column has an entry equal to 1.
    let mut f = DVector::from_fn(n, |i, _| cost.row(i).min());
    let mut g = DVector::from_fn(m, |j, _| {
        (0..n)
            .map(|i| cost[(i, j)] - f[i])
            .fold(f64::INFINITY, f64::min)
    });
    let kernel = |f: &DVector<f64>, g: &DVector<f64>| {
        DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / lambda).exp())
    };
    let row_lse_update = |g: &DVector<f64>| {
        DVector::from_fn(n, |i, _| {
            lambda * ln_a[i] - lambda * logsumexp((0..m).map(|j| (g[j] - cost[(i, j)]) / lambda))
        })
    };
    let col_lse_update = |f: &DVector<f64>| {
        DVector::from_fn(m, |j, _| {
            lambda * ln_b[j] - lambda * logsumexp((0..n).map(|i| (f[i] - cost[(i, j)]) / lambda))
        })
    };

    let mut k = kernel(&f, &g);
    let mut u: DVector<f64> = DVector::from_element(n, 1.0);
    let mut v: DVector<f64> = DVector::from_element(m, 1.0);
    let mut kv = &k * &v;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    // Once any row or column sum underflows the scaled kernel is abandoned
    // for exact log-sum-exp updates of the potentials.
    let mut log_domain = false;

    while iterations < params.max_iter {
        iterations += 1;

        if !log_domain && kv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            log_domain = true;
        }
        if log_domain {
            f += u.map(|x| lambda * x.ln());
            g += v.map(|x| lambda * x.ln());
            u.fill(1.0);
            v.fill(1.0);
            f = row_lse_update(&g);
            g = col_lse_update(&f);
        } else {
            u = a.component_div(&kv);
            let ktu = k.tr_mul(&u);
            if ktu.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                log_domain = true;
                f += u.map(|x| lambda * x.ln());
                u.fill(1.0);
                g = col_lse_update(&f);
            } else {
                v = b.component_div(&ktu);
            }
            let big = u
                .iter()
                .chain(v.iter())
                .any(|&x| x.ln().abs() > ABSORB_THRESHOLD);
            if big || log_domain {
                f += u.map(|x| lambda * x.ln());
                g += v.map(|x| lambda * x.ln());
                u.fill(1.0);
                v.fill(1.0);
                k = kernel(&f, &g);
            }
        }

        // Columns are exact after the column update, so Σ P = Σ b and the
        // dual reduces to ⟨F, a⟩ + ⟨G, b⟩ − λ Σ b.
        let dual = (0..n)
            .map(|i| a[i] * (f[i] + lambda * u[i].ln()))
            .sum::<f64>()
            + (0..m)
                .map(|j| b[j] * (g[j] + lambda * v[j].ln()))
                .sum::<f64>()
            - lambda * sb;
        if let Some(&prev) = trace.last() {
            debug_assert!(
                -dual <= prev + 1e-9 * (1.0 + prev.abs()),
                "sinkhorn dual decreased: {} -> {}",
                prev,
                -dual
            );
        }
        trace.push(-dual);

        let row_err = if log_domain {
            (0..n).fold(0.0f64, |acc, i| {
                let s: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - cost[(i, j)]) / lambda).exp())
                    .sum();
                acc.max((s - a[i]).abs())
            })
        } else {
            kv = &k * &v;
            (0..n).fold(0.0f64, |acc, i| acc.max((u[i] * kv[i] - a[i]).abs()))
        };
        if row_err < params.tol {
            converged = true;
            break;
        }
    }

    if log_domain {
        k = kernel(&f, &g);
    }
    let mut values = k;
    for i in 0..n {
        values.row_mut(i).scale_mut(u[i]);
    }
    for j in 0..m {
        values.column_mut(j).scale_mut(v[j]);
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sinkhorn plan"));
    }
    let (row_residual, col_residual) = marginal_residuals(&values, a, b);
    let converged = converged && row_residual < params.tol && col_residual < params.tol;
    if !converged {
        log::warn!(
            "sinkhorn stopped after {iterations} iterations with residuals {row_residual:.2e}/{col_residual:.2e}"
        );
    }
    Ok(TransportPlan {
        values,
        row_marginal: a.clone(),
        col_marginal: b.clone(),
        row_residual,
        col_residual,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// A `d × d` orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalTransform(DMatrix<f64>);

impl OrthogonalTransform {
    /// Tolerance on `‖QᵀQ − I‖_F`.
    pub const TOL: f64 = 1e-8;

    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} transform",
                q.nrows(),
                q.ncols()
            )));
        }
        let r = linalg::orthogonality_residual(&q);
        if !(r <= Self::TOL) {
            return Err(Error::invalid(format!(
                "matrix is not orthogonal (residual {r:.3e})"
            )));
        }
        Ok(OrthogonalTransform(q))
    }

    pub fn identity(d: usize) -> Self {
        OrthogonalTransform(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn residual(&self) -> f64 {
        linalg::orthogonality_residual(&self.0)
    }

    /// `Y · Q`.
    pub fn apply(&self, y: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if y.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding dimension {} vs transform dimension {}",
                y.dim(),
                self.dim()
            )));
        }
        EmbeddingMatrix::new(y.values() * &self.0)
    }
}

/// Result of an orthogonal Procrustes fit.
#[derive(Debug, Clone)]
pub struct ProcrustesFit {
    pub transform: OrthogonalTransform,
    /// Numerical rank of the cross-covariance `Y₁ᵀY₂`.
    pub rank: usize,
}

impl ProcrustesFit {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.transform.dim()
    }
}

/// `argmin_Q ‖Y₁Q − Y₂‖_F` over orthogonal `Q`: the polar factor `UVᵀ` of
/// `Y₁ᵀY₂`.
pub fn procrustes(y1: &EmbeddingMatrix, y2: &EmbeddingMatrix) -> Result<OrthogonalTransform> {
    Ok(procrustes_fit(y1.values(), y2.values())?.transform)
}

/// Procrustes on raw matrices, reporting the cross-covariance rank. A rank
/// deficient problem has many optimal transforms; the one nearest the
/// identity is returned.
pub fn procrustes_fit(y1: &DMatrix<f64>, y2: &DMatrix<f64>) -> Result<ProcrustesFit> {
    if y1.shape() != y2.shape() {
        return Err(Error::ShapeMismatch(format!(
            "procrustes inputs {:?} and {:?}",
            y1.shape(),
            y2.shape()
        )));
    }
    let cross = y1.transpose() * y2;
    if cross.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("procrustes cross-covariance"));
    }
    let (q, rank) = linalg::polar_factor(&cross);
    if rank < cross.nrows() {
        log::debug!(
            "procrustes cross-covariance has rank {rank} < {}",
            cross.nrows()
        );
    }
    Ok(ProcrustesFit {
        transform: OrthogonalTransform::new(q)?,
        rank,
    })
}

/// Entropic linear-minimization oracle over the Birkhoff polytope:
/// `argmin_{S doubly stochastic} ⟨S, gradient⟩ − λ₀·H(S)`.
///
/// Rows and columns of the returned plan sum to 1.
pub fn fw_linear_step(
    gradient: &DMatrix<f64>,
    lambda0: f64,
    sinkhorn_iters: usize,
) -> Result<TransportPlan> {
    let (n, m) = gradient.shape();
    if n != m {
        return Err(Error::ShapeMismatch(format!(
            "{n}x{m} gradient is not square"
        )));
    }
    let ones = DVector::from_element(n, 1.0);
    sinkhorn_with_marginals(
        gradient,
        &ones,
        &ones,
        SinkhornParams::new(lambda0).with_max_iter(sinkhorn_iters),
    )
}
