//! End-to-end alignment of two graphs: embed, align subspaces, match.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{self, EmbeddingCache};
use crate::embed::{self, EmbedConfig, EmbeddingMatrix, NetmfMode};
use crate::error::Result;
use crate::graph::{self, SparseGraph};
use crate::matching::{self, Alignment};
use crate::subspace::{self, SubspaceAlignment, SubspaceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub embed: EmbedConfig,
    pub mode: NetmfMode,
    pub subspace: SubspaceConfig,
    /// Candidates kept per node; the first is the match.
    pub top_k: usize,
    /// Enforce a one-to-one matching through a rounded Sinkhorn plan.
    pub bijective: bool,
    /// Sinkhorn regularization for the one-to-one matching.
    pub bijective_lambda: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embed: EmbedConfig::default(),
            mode: NetmfMode::Approx,
            subspace: SubspaceConfig::default(),
            top_k: 1,
            bijective: false,
            bijective_lambda: 0.01,
        }
    }
}

impl PipelineConfig {
    /// Defaults with dimensions clamped for `n`-node graphs.
    pub fn fitted_to(n: usize) -> Self {
        PipelineConfig::default().fit(n)
    }

    pub fn fit(mut self, n: usize) -> Self {
        self.embed = self.embed.fitted_to(n);
        self.subspace = self.subspace.fitted_to(n);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub embed: Duration,
    pub subspace: Duration,
    pub matching: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.embed + self.subspace + self.matching
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub y1: EmbeddingMatrix,
    pub y2: EmbeddingMatrix,
    pub subspace: SubspaceAlignment,
    /// One entry per node of the first graph.
    pub alignment: Alignment,
    pub timings: StageTimings,
}

fn embed_cached(
    g: &SparseGraph,
    cfg: &PipelineConfig,
    cache: Option<&EmbeddingCache>,
) -> Result<EmbeddingMatrix> {
    let key = cache.map(|_| cache::cache_key(g, &cfg.embed, cfg.mode));
    if let (Some(c), Some(k)) = (cache, key.as_deref()) {
        if let Some(y) = c.get(k) {
            return Ok(y);
        }
    }
    let y = embed::embed_graph(g, &cfg.embed, cfg.mode)?;
    if let (Some(c), Some(k)) = (cache, key.as_deref()) {
        c.put(k, &y)?;
    }
    Ok(y)
}

pub fn align_graphs(
    g1: &SparseGraph,
    g2: &SparseGraph,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    align_graphs_cached(g1, g2, cfg, None)
}

/// Align `g1` to `g2`. The smaller graph is padded with isolated nodes.
pub fn align_graphs_cached(
    g1: &SparseGraph,
    g2: &SparseGraph,
    cfg: &PipelineConfig,
    cache: Option<&EmbeddingCache>,
) -> Result<PipelineOutput> {
    let n = g1.n().max(g2.n());
    let p1 = graph::pad_to_size(g1, n)?;
    let p2 = graph::pad_to_size(g2, n)?;

    let start = Instant::now();
    let (y1, y2) = rayon::join(
        || embed_cached(&p1, cfg, cache),
        || embed_cached(&p2, cfg, cache),
    );
    let (y1, y2) = (y1?, y2?);
    let embed_time = start.elapsed();

    let start = Instant::now();
    let sub = subspace::align_subspaces(&y1, &y2, &p1, &p2, &cfg.subspace)?;
    let subspace_time = start.elapsed();

    let start = Instant::now();
    let mut alignment = if cfg.bijective {
        matching::bijective_match(
            &y1,
            &sub.transform,
            &y2,
            cfg.bijective_lambda,
            cfg.subspace.sinkhorn_max_iter,
        )?
    } else {
        matching::greedy_match(&y1, &sub.transform, &y2, cfg.top_k.max(1))?
    };
    alignment.mapping.truncate(g1.n());
    alignment.distances.truncate(g1.n());
    if let Some(t) = alignment.top_k.as_mut() {
        t.truncate(g1.n());
    }
    let matching_time = start.elapsed();

    Ok(PipelineOutput {
        y1,
        y2,
        subspace: sub,
        alignment,
        timings: StageTimings {
            embed: embed_time,
            subspace: subspace_time,
            matching: matching_time,
        },
    })
}
