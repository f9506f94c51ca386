//! NetMF-style proximity-preserving node embeddings.
//!
//! The random-walk PMI matrix of a graph with window `w` and `α` negative
//! samples is
//!
//! ```text
//! M = vol(G) / (w·α) · (Σ_{r=1..w} (D⁻¹A)^r) · D⁻¹,     M' = log(max(M, 1))
//! ```
//!
//! and the embedding is the rank-`d` factor `U_d √Σ_d` of `M'`. Because `M'`
//! is symmetric its singular vectors are its eigenvectors, so the truncated
//! SVD is taken from a symmetric eigendecomposition ordered by |λ|.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::linalg;

/// Matrix norm used to rescale embeddings after factorization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Largest singular value.
    #[default]
    Spectral,
    Frobenius,
}

/// How the window sum of transition-matrix powers is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetmfMode {
    /// Explicit powers of `D⁻¹A`.
    Exact,
    /// Top eigenpairs of `D^{-1/2} A D^{-1/2}`.
    #[default]
    Approx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negative: f64,
    pub eigenpairs: usize,
    pub norm: NormKind,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 128,
            window: 10,
            negative: 1.0,
            eigenpairs: 256,
            norm: NormKind::Spectral,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.dim == 0 || self.window == 0 {
            return Err(Error::invalid(
                "embedding dimension and window must be at least 1",
            ));
        }
        if !(self.negative >= 1.0) {
            return Err(Error::invalid(format!(
                "negative sample count must be at least 1, got {}",
                self.negative
            )));
        }
        if self.dim > n {
            return Err(Error::invalid(format!(
                "embedding dimension {} exceeds node count {n}",
                self.dim
            )));
        }
        if self.eigenpairs == 0 || self.eigenpairs > n {
            return Err(Error::invalid(format!(
                "eigenpair count {} not in [1, {n}]",
                self.eigenpairs
            )));
        }
        Ok(())
    }

    /// Clamp `dim` and `eigenpairs` so the config is valid for `n` nodes.
    pub fn fitted_to(mut self, n: usize) -> Self {
        self.dim = self.dim.min(n).max(1);
        self.eigenpairs = self.eigenpairs.min(n).max(1);
        self
    }
}

/// An `n × d` matrix of node embeddings, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(DMatrix<f64>);

impl EmbeddingMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix"));
        }
        Ok(EmbeddingMatrix(values))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Rows reordered so that row `perm[i]` of the result is row `i` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut out = DMatrix::zeros(self.n(), self.dim());
        for (i, &p) in perm.iter().enumerate() {
            out.set_row(p, &self.0.row(i));
        }
        EmbeddingMatrix(out)
    }
}

fn inverse_degrees(g: &SparseGraph) -> Vec<f64> {
    (0..g.n())
        .map(|i| match g.degree(i) {
            0 => 0.0,
            d => 1.0 / d as f64,
        })
        .collect()
}

fn clip_log(m: &mut DMatrix<f64>) {
    for v in m.iter_mut() {
        *v = v.max(1.0).ln();
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Clip-logged PMI matrix from explicit powers of the transition matrix.
pub fn netmf_matrix_exact(g: &SparseGraph, cfg: &EmbedConfig) -> Result<DMatrix<f64>> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    if cfg.window == 0 || !(cfg.negative >= 1.0) {
        return Err(Error::invalid(
            "window and negative sample count must be at least 1",
        ));
    }
    let n = g.n();
    let dinv = inverse_degrees(g);
    // power_r = (D⁻¹A)^r, advanced as power_{r+1} = (power_r · D⁻¹) · A.
    let mut power = g.to_dense();
    for (i, &di) in dinv.iter().enumerate() {
        power.row_mut(i).scale_mut(di);
    }
    let mut sum = power.clone();
    for _ in 1..cfg.window {
        let mut scaled = power;
        for (j, &dj) in dinv.iter().enumerate() {
            scaled.column_mut(j).scale_mut(dj);
        }
        power = g.rmul_dense(&scaled);
        sum += &power;
    }
    let scale = g.volume() as f64 / (cfg.window as f64 * cfg.negative);
    let mut m = sum;
    for (j, &dj) in dinv.iter().enumerate() {
        m.column_mut(j).scale_mut(scale * dj);
    }
    debug_assert_eq!(m.nrows(), n);
    symmetrize(&mut m);
    clip_log(&mut m);
    Ok(m)
}

/// Clip-logged PMI matrix from the top `eigenpairs` eigenpairs of the
/// symmetrically normalized adjacency.
pub fn netmf_matrix_approx(g: &SparseGraph, cfg: &EmbedConfig) -> Result<DMatrix<f64>> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n = g.n();
    if cfg.eigenpairs == 0 || cfg.eigenpairs > n {
        return Err(Error::invalid(format!(
            "eigenpair count {} not in [1, {n}]",
            cfg.eigenpairs
        )));
    }
    if cfg.window == 0 || !(cfg.negative >= 1.0) {
        return Err(Error::invalid(
            "window and negative sample count must be at least 1",
        ));
    }
    let dinv_sqrt: Vec<f64> = inverse_degrees(g).iter().map(|v| v.sqrt()).collect();
    let mut normalized = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in g.neighbors(i) {
            normalized[(i, j)] = dinv_sqrt[i] * dinv_sqrt[j];
        }
    }
    let eig = linalg::top_eigenpairs(&normalized, cfg.eigenpairs)?;
    let w = cfg.window as f64;
    let filtered = eig.values.map(|lambda| {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for _ in 0..cfg.window {
            pow *= lambda;
            acc += pow;
        }
        acc / w
    });
    let mut left = eig.vectors;
    for (i, &s) in dinv_sqrt.iter().enumerate() {
        left.row_mut(i).scale_mut(s);
    }
    let mut right_t = left.transpose();
    for (c, &f) in filtered.iter().enumerate() {
        right_t.row_mut(c).scale_mut(f);
    }
    let mut m = &left * right_t;
    m *= g.volume() as f64 / cfg.negative;
    symmetrize(&mut m);
    clip_log(&mut m);
    Ok(m)
}

/// Embed `g` as the normalized rank-`dim` factor of its PMI matrix.
///
/// Each singular vector's largest-magnitude entry is made positive, which
/// makes the output deterministic and equivariant under node relabeling when
/// singular values are distinct.
pub fn embed_graph(g: &SparseGraph, cfg: &EmbedConfig, mode: NetmfMode) -> Result<EmbeddingMatrix> {
    cfg.validate(g.n())?;
    let m = match mode {
        NetmfMode::Exact => netmf_matrix_exact(g, cfg)?,
        NetmfMode::Approx => netmf_matrix_approx(g, cfg)?,
    };
    factorize(&m, cfg.dim, cfg.norm)
}

/// Rank-`dim` symmetric factorization `U √|Λ|`, rescaled to unit norm.
pub fn factorize(m: &DMatrix<f64>, dim: usize, norm: NormKind) -> Result<EmbeddingMatrix> {
    let eig = linalg::top_eigenpairs(m, dim)?;
    let mut y = eig.vectors;
    linalg::fix_column_signs(&mut y);
    let sv: DVector<f64> = eig.values.map(f64::abs);
    let denom = match norm {
        NormKind::Spectral => sv[0].sqrt(),
        NormKind::Frobenius => sv.sum().sqrt(),
    };
    if !(denom > 0.0) {
        return Err(Error::invalid(
            "proximity matrix is identically zero; nothing to embed",
        ));
    }
    for (c, &s) in sv.iter().enumerate() {
        y.column_mut(c).scale_mut(s.sqrt() / denom);
    }
    EmbeddingMatrix::new(y)
}
