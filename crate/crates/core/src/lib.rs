//! Cut-informed deep clustering for sparse expression matrices.
//!
//! The pipeline learns a low-dimensional embedding with a dense autoencoder
//! whose latent space is regularized by a relaxed normalized-cut objective over
//! two cell-cell affinity graphs (an inner-product graph and a cosine graph).
//! Cluster assignments come from a Student-t soft assignment trained against a
//! target distribution obtained by entropic optimal transport, which keeps the
//! cluster sizes aligned with estimated mixing proportions.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`expr`] | expression matrix loading, validation and preprocessing |
//! | [`graph`] | affinity graphs, normalized Laplacians, exact normalized cut |
//! | [`nn`] | MLP autoencoder, backpropagation, Adam, gradient checking, checkpoints |
//! | [`objective`] | reconstruction, cut and KL losses with their gradients |
//! | [`assign`] | soft assignment, target distributions, Sinkhorn, k-means |
//! | [`metrics`] | ACC (Hungarian), NMI, ARI |
//! | [`pipeline`] | configuration, two-phase training, synthetic data, ablations |

pub mod assign;
pub mod error;
pub mod expr;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
