//! Class-separation diagnostics for dense layers.
//!
//! For each sample, a layer's weights `W` and input activations `a` give the
//! interaction matrix `N = W diag(a)`. Thresholding `N` row by row yields a
//! binary significance mask; counting masks per class gives a matrix of
//! independent Bernoulli models. Classes are then compared with
//! coordinate-wise KL divergence, summarised by entropy, and inspected
//! through sparsity histograms.
//!
//! Modules, bottom-up:
//!
//! - [`tensorio`]: `.npy` arrays and the dump manifest.
//! - [`mlp`]: a dense network and SGD trainer for self-contained experiments.
//! - [`interactions`]: `N` and significance masks.
//! - [`class_stats`]: streaming per-class Bernoulli models.
//! - [`divergences`]: KL matrices, summary scalars, shifted-data comparison.
//! - [`sparsity`]: path-frequency histograms.
//! - [`ablations`]: alternative separation metrics.
//! - [`report`]: the `analyze`, `compare`, `memorisation` and `selfcheck` commands.

pub mod ablations;
pub mod class_stats;
pub mod divergences;
pub mod error;
pub mod interactions;
pub mod mlp;
pub mod report;
pub mod sparsity;
pub mod tensorio;

pub use error::{Error, Result};
