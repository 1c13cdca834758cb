//! Semantic Gaussian-splatting mapping core.
//!
//! A scene of labeled 3D Gaussians is rendered to RGB, depth and an instance
//! label map by weight voting during α-compositing. Each incoming 2D
//! segmentation is reconciled with the rendered labels by a confidence-based
//! consensus, the resulting label changes are written back to the Gaussians
//! responsible for them, and oversized Gaussians that bleed a label across
//! object boundaries are pruned.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod consensus;
pub mod error;
pub mod harness;
pub mod pruning;
pub mod raster;
pub mod render;
pub mod scene;
pub mod voting;

pub use camera::{CameraIntrinsics, Pose};
pub use error::{Error, Result};
pub use raster::{LabelMap, Raster, RgbImage, ScalarImage};
pub use render::{FrameRender, RenderConfig};
pub use scene::{GaussianScene, Label, LabelClassTable, LabeledGaussian, BACKGROUND};
