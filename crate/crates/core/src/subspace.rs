//! Embedding-subspace alignment.
//!
//! A Frank–Wolfe solve of the relaxed graph-matching problem
//! `min_{P ∈ Bⁿ} ‖A₁P − PA₂‖²_F` gives soft correspondences `P*`, from which
//! Procrustes on `(Y₁, P*Y₂)` yields a starting transform. That transform is
//! refined by stochastic alternating Wasserstein/Procrustes steps: for each
//! pair of minibatches, Sinkhorn matches the rows under the current `Q`, and
//! `Q` takes a gradient step followed by re-projection onto the orthogonal
//! group.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::linalg;
use crate::otlin::{self, OrthogonalTransform, SinkhornParams, TransportPlan};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceConfig {
    /// Frank–Wolfe iterations of the convex initialization.
    pub init_iters: usize,
    /// Sinkhorn regularization inside the Frank–Wolfe oracle.
    pub init_lambda: f64,
    /// Stochastic Wasserstein–Procrustes iterations.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Sinkhorn regularization on minibatches.
    pub lambda: f64,
    /// Seed for minibatch sampling.
    pub seed: u64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// Round each minibatch plan to its row argmax before the gradient.
    pub hard_rounding: bool,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig {
            init_iters: 10,
            init_lambda: 1.0,
            iterations: 50,
            batch_size: 10,
            learning_rate: 1.0,
            lambda: 0.05,
            seed: 0,
            sinkhorn_max_iter: 500,
            sinkhorn_tol: 1e-6,
            hard_rounding: false,
        }
    }
}

impl SubspaceConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.init_iters == 0
            || self.iterations == 0
            || self.batch_size == 0
            || self.sinkhorn_max_iter == 0
        {
            return Err(Error::invalid(
                "iteration counts and batch size must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("lambda", self.lambda), ("init_lambda", self.init_lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size > n {
            return Err(Error::invalid(format!(
                "batch size {} exceeds node count {n}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// Clamp the batch size to `n`.
    pub fn fitted_to(mut self, n: usize) -> Self {
        self.batch_size = self.batch_size.min(n).max(1);
        self
    }

    fn sinkhorn(&self, lambda: f64) -> SinkhornParams {
        SinkhornParams::new(lambda)
            .with_max_iter(self.sinkhorn_max_iter)
            .with_tol(self.sinkhorn_tol)
    }
}

/// Output of the Frank–Wolfe initialization.
#[derive(Debug, Clone)]
pub struct ConvexInit {
    /// Final iterate `P*`; rows and columns sum to 1.
    pub plan: TransportPlan,
    /// `‖A₁P − PA₂‖²_F` at the starting point and after every iteration.
    pub objective_trace: Vec<f64>,
}

/// `‖A₁P − PA₂‖²_F`.
pub fn matching_objective(a1: &SparseGraph, a2: &SparseGraph, p: &DMatrix<f64>) -> f64 {
    (a1.mul_dense(p) - a2.rmul_dense(p)).norm_squared()
}

/// Frank–Wolfe on `min_{P ∈ Bⁿ} ‖A₁P − PA₂‖²_F` from the barycenter `11ᵀ/n`,
/// with an entropic Sinkhorn oracle and step size `2/(k+2)`.
pub fn convex_init(a1: &SparseGraph, a2: &SparseGraph, cfg: &SubspaceConfig) -> Result<ConvexInit> {
    let n = a1.n();
    if a2.n() != n {
        return Err(Error::ShapeMismatch(format!(
            "graphs have {} and {} nodes; pad to equal size first",
            n,
            a2.n()
        )));
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("graphs are empty".into()));
    }
    let mut p = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut trace = vec![matching_objective(a1, a2, &p)];
    let params = cfg.sinkhorn(cfg.init_lambda);
    let ones = DVector::from_element(n, 1.0);
    for k in 0..cfg.init_iters {
        let residual = a1.mul_dense(&p) - a2.rmul_dense(&p);
        // ∇ = 2(A₁ᵀR − RA₂ᵀ); both adjacencies are symmetric.
        let gradient = (a1.mul_dense(&residual) - a2.rmul_dense(&residual)) * 2.0;
        let direction = otlin::sinkhorn_with_marginals(&gradient, &ones, &ones, params)?;
        let gamma = 2.0 / (k as f64 + 2.0);
        p = p * (1.0 - gamma) + direction.values * gamma;
        trace.push(matching_objective(a1, a2, &p));
    }
    let (row_residual, col_residual) = {
        let rows = p.column_sum();
        let cols = p.row_sum();
        (
            rows.iter().fold(0.0f64, |a, x| a.max((x - 1.0).abs())),
            cols.iter().fold(0.0f64, |a, x| a.max((x - 1.0).abs())),
        )
    };
    Ok(ConvexInit {
        plan: TransportPlan {
            values: p,
            row_marginal: ones.clone(),
            col_marginal: ones,
            row_residual,
            col_residual,
            iterations: cfg.init_iters,
            converged: true,
            objective_trace: Vec::new(),
        },
        objective_trace: trace,
    })
}

/// Procrustes between `Y₁` and `P*Y₂`, i.e. the polar factor of `Y₁ᵀP*Y₂`.
pub fn init_transform(
    y1: &EmbeddingMatrix,
    y2: &EmbeddingMatrix,
    pstar: &DMatrix<f64>,
) -> Result<OrthogonalTransform> {
    if pstar.nrows() != y1.n() || pstar.ncols() != y2.n() || y1.dim() != y2.dim() {
        return Err(Error::ShapeMismatch(format!(
            "Y1 {:?}, P* {:?}, Y2 {:?}",
            y1.values().shape(),
            pstar.shape(),
            y2.values().shape()
        )));
    }
    let moved = pstar * y2.values();
    Ok(otlin::procrustes_fit(y1.values(), &moved)?.transform)
}

/// One row of the stochastic optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpStep {
    pub iteration: usize,
    /// `b · Σᵢⱼ Pᵢⱼ ‖xᵢQ − yⱼ‖²` on the minibatch, before the update.
    pub minibatch_objective: f64,
    /// `‖QᵀQ − I‖_F` after the update.
    pub orthogonality_residual: f64,
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[WpStep]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for step in trace {
        wtr.serialize(step)?;
    }
    wtr.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

fn gather_rows(y: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), y.ncols(), |r, c| y[(rows[r], c)])
}

/// Stochastic alternating Wasserstein–Procrustes refinement of `q0`.
///
/// Minibatch rows are drawn uniformly without replacement, independently for
/// the two graphs and afresh every iteration.
pub fn stochastic_wp(
    y1: &EmbeddingMatrix,
    y2: &EmbeddingMatrix,
    q0: &OrthogonalTransform,
    cfg: &SubspaceConfig,
) -> Result<(OrthogonalTransform, Vec<WpStep>)> {
    let d = y1.dim();
    if y2.dim() != d || q0.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions {} and {} with a {}-dimensional transform",
            d,
            y2.dim(),
            q0.dim()
        )));
    }
    let b = cfg.batch_size;
    if b == 0 || b > y1.n().min(y2.n()) {
        return Err(Error::invalid(format!(
            "batch size {b} not in [1, {}]",
            y1.n().min(y2.n())
        )));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid(
            "learning rate must be finite and nonnegative",
        ));
    }
    let params = cfg.sinkhorn(cfg.lambda);
    let mut rng = seeds::rng(cfg.seed);
    let mut q = q0.values().clone();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for t in 1..=cfg.iterations {
        let rows1 = index::sample(&mut rng, y1.n(), b).into_vec();
        let rows2 = index::sample(&mut rng, y2.n(), b).into_vec();
        let x = gather_rows(y1.values(), &rows1) * &q;
        let y = gather_rows(y2.values(), &rows2);
        let cost = -(&x * y.transpose());
        let mut plan = otlin::sinkhorn(&cost, params.lambda, params.max_iter, params.tol)?.values;
        if cfg.hard_rounding {
            let mut hard = DMatrix::zeros(b, b);
            for i in 0..b {
                let j = plan.row(i).transpose().imax();
                hard[(i, j)] = 1.0 / b as f64;
            }
            plan = hard;
        }

        let mut objective = 0.0;
        for i in 0..b {
            for j in 0..b {
                if plan[(i, j)] > 0.0 {
                    objective += plan[(i, j)] * (x.row(i) - y.row(j)).norm_squared();
                }
            }
        }
        objective *= b as f64;

        // ∂/∂Q ‖Y₁ₜQ − PY₂ₜ‖² up to terms constant on the orthogonal group.
        let gradient = gather_rows(y1.values(), &rows1).transpose() * &plan * &y * -2.0;
        if gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("wasserstein-procrustes gradient"));
        }
        if cfg.learning_rate > 0.0 {
            let step = &q - gradient * cfg.learning_rate;
            q = linalg::polar_factor(&step).0;
        }
        let residual = linalg::orthogonality_residual(&q);
        if !(residual <= OrthogonalTransform::TOL) {
            return Err(Error::invalid(format!(
                "orthogonality lost at iteration {t} (residual {residual:.3e})"
            )));
        }
        trace.push(WpStep {
            iteration: t,
            minibatch_objective: objective,
            orthogonality_residual: residual,
        });
    }
    Ok((OrthogonalTransform::new(q)?, trace))
}

/// `‖Y₁Q − Y₂‖²_F`, the Wasserstein–Procrustes objective at the identity
/// correspondence.
pub fn full_objective(y1: &EmbeddingMatrix, y2: &EmbeddingMatrix, q: &OrthogonalTransform) -> f64 {
    (y1.values() * q.values() - y2.values()).norm_squared()
}

/// Everything produced by the subspace-alignment stage.
#[derive(Debug, Clone)]
pub struct SubspaceAlignment {
    pub transform: OrthogonalTransform,
    pub initial_transform: OrthogonalTransform,
    pub init_objective: Vec<f64>,
    pub trace: Vec<WpStep>,
}

/// Convex initialization, initial Procrustes transform, then stochastic
/// refinement.
pub fn align_subspaces(
    y1: &EmbeddingMatrix,
    y2: &EmbeddingMatrix,
    a1: &SparseGraph,
    a2: &SparseGraph,
    cfg: &SubspaceConfig,
) -> Result<SubspaceAlignment> {
    cfg.validate(y1.n().min(y2.n()))?;
    let init = convex_init(a1, a2, cfg)?;
    let q0 = init_transform(y1, y2, &init.plan.values)?;
    let (transform, trace) = stochastic_wp(y1, y2, &q0, cfg)?;
    Ok(SubspaceAlignment {
        transform,
        initial_transform: q0,
        init_objective: init.objective_trace,
        trace,
    })
}
