//! Segmentation network assembly: configuration, the model itself,
//! parameter/MAC accounting, and weight checkpoints.

pub mod accounting;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod net;
