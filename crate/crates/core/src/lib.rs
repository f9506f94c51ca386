//! Unsupervised network alignment with proximity-preserving node embeddings.
//!
//! The pipeline has three stages:
//!
//! 1. [`embed`]: each graph is embedded independently with a NetMF-style
//!    factorization of its random-walk PMI matrix, then normalized.
//! 2. [`subspace`]: the two embedding spaces are aligned by an orthogonal
//!    transform. A Frank–Wolfe relaxation of graph matching seeds a
//!    Procrustes fit, which is refined by stochastic alternating
//!    Wasserstein/Procrustes steps on minibatches.
//! 3. [`matching`]: every source node is matched to its nearest target
//!    embedding through a k-d tree.
//!
//! [`eval`] scores alignments (accuracy, matched neighborhood consistency)
//! and [`experiment`] drives the noisy-permutation protocol end to end.
//!
//! ```no_run
//! use embalign::{graph, pipeline, synth};
//!
//! let g1 = synth::synth_graph(&synth::GraphKind::RandomRegular { degree: 6 }, 100, 7).unwrap();
//! let truth = graph::GroundTruthPermutation::random(g1.n(), 11);
//! let g2 = graph::permute_graph(&g1, &truth).unwrap();
//! let out = pipeline::align_graphs(&g1, &g2, &pipeline::PipelineConfig::fitted_to(g1.n())).unwrap();
//! println!("{:?}", &out.alignment.mapping[..10]);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod embed;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod matching;
pub mod otlin;
pub mod pipeline;
pub mod seeds;
pub mod subspace;
pub mod synth;

pub use embed::{EmbedConfig, EmbeddingMatrix, NetmfMode, NormKind};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use graph::{GroundTruthPermutation, SparseGraph};
pub use matching::Alignment;
pub use otlin::{OrthogonalTransform, TransportPlan};
pub use subspace::SubspaceConfig;
