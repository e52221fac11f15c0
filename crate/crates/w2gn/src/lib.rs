//! Wasserstein-2 generative networks.
//!
//! Input-convex networks whose input-gradients are cyclically monotone
//! generative maps, trained by a non-minimax regularized-correlations
//! objective, together with exact small-scale optimal-transport oracles,
//! toy-distribution samplers and an image color-transfer pipeline.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod grad;
pub mod icnn;
pub mod metrics;
pub mod opt;
pub mod train;
