//! A small, self-contained differentiable tensor library and an
//! encoder-decoder semantic segmentation model built on it.
//!
//! Layering, bottom to top:
//!
//! * [`tensor`]: flat f32 NCHW tensors, shape-checked forward ops, and a
//!   reverse-mode gradient tape.
//! * [`params`]: named parameter storage with seeded deterministic init.
//! * [`blocks`]: reusable layers (conv + norm widgets, the bottleneck block,
//!   the transformer capsule, skip-fusion and pixel attention gates).
//! * [`model`]: full network assembly, parameter/MAC accounting, and the
//!   checkpoint format.
//! * [`train`] / [`eval`]: the optimization loop and confusion-matrix
//!   metrics.
//! * [`data`]: binary PPM/PGM codecs, the on-disk dataset layout, and a
//!   seeded synthetic dataset generator.
//! * [`gradcheck`]: finite-difference verification harness used by tests and
//!   the CLI.

pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
