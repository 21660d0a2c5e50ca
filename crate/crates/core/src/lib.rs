//! Per-path delay and jitter prediction with a heterogeneous path/link graph
//! neural network.
//!
//! Paths carry two latent states: a primary state driven by the links they
//! traverse, and a secondary state driven by the primary states of paths that
//! share a link with them. Links are updated from a convex mix of both. The
//! crate also ships a synthetic data generator with an M/M/1 label oracle,
//! a training loop and evaluation metrics.

pub mod autodiff;
pub mod netgraph;
pub mod datagen;
pub mod model;
pub mod training;
pub mod metrics;
pub mod cli;

/// Mixes a base seed with an index (SplitMix64 finalizer) so that derived
/// streams are independent of the order they are requested in.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
