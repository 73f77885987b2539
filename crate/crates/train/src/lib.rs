//! Training: polynomial learning-rate decay, SGD and Adam, light
//! augmentation, and the deterministic minibatch loop.

pub mod augment;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use optim::{Optimizer, OptimizerKind};
pub use schedule::poly_lr;
pub use trainer::{train, TrainConfig, TrainStats};
