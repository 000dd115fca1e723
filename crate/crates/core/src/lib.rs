//! Deformable-convolution features with gated fusion for tracking-by-
//! detection. The crate is organized bottom-up:
//!
//! - [`tensor`]: minimal f64 tensors with hand-paired forward/backward ops,
//!   SGD with momentum and weight decay, and numerical gradient checking.
//! - [`deform`]: offset regression and bilinear deformable resampling.
//! - [`gate`]: the sigmoid gate and the gated feature fusion.
//! - [`tracker`]: the network, offline three-step training and the online
//!   tracking-by-detection loop.
//! - [`synthseq`]: deterministic synthetic sequences with per-attribute
//!   challenges (deformation, rotation, scale, illumination, occlusion).
//! - [`eval`]: one-pass-evaluation metrics, sequence/result file I/O, SVG
//!   plots and the ablation harness.

pub mod config;
pub mod deform;
pub mod error;
pub mod eval;
pub mod gate;
pub mod synthseq;
pub mod tensor;
pub mod tracker;

pub use config::Config;
pub use error::{Error, Result};
