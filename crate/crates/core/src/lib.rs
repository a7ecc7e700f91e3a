//! Voxel feature fields fitted to multi-view 2D feature maps through
//! differentiable volume rendering.
//!
//! A scene is a dense grid of density logits and language-aligned feature
//! vectors. Rays cast from posed pinhole cameras sample the grid, the
//! rendered features are compared with target feature maps, and the
//! analytic gradient of that comparison is pushed back into the grid. Once
//! fitted, the grid answers open-vocabulary queries and yields a zero-shot
//! semantic occupancy map.
//!
//! The pipeline is split into:
//!
//! - [`camera`]: pinhole models, pose tracks and ray generation.
//! - [`grid`]: the voxel grid, trilinear sampling and gradient scatter.
//! - [`renderer`]: ray sampling, forward rendering and its adjoint.
//! - [`losses`]: distillation and ablation losses.
//! - [`trainer`]: the scene-fitting loop and the Adam optimizer.
//! - [`reducer`]: a shared-weight linear autoencoder for feature compression.
//! - [`inference`]: retrieval, segmentation and evaluation metrics.
//! - [`scene_synth`]: synthetic ground truth and the reference renderer.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod camera;
pub mod error;
pub mod feature_map;
pub mod gradcheck;
pub mod grid;
pub mod inference;
pub mod losses;
pub mod manifest;
pub mod reducer;
pub mod renderer;
pub mod scene_synth;
pub mod trainer;

pub use error::{Error, Result};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
