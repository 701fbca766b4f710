//! Training harness: configuration, optimizer, the RD training loop,
//! checkpoints and evaluation.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod harness;
pub mod log;
pub mod optimizer;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{OptimizerConfig, TrainConfig, TrainParams};
pub use evaluate::{evaluate, evaluate_image, evaluate_sweep, jnd_labels, ImageEval};
pub use harness::{distortion_term_g, sweep, train, LossParts, TrainData, TrainOutput};
pub use log::{EpochRecord, StepRecord, TrainLog};
pub use optimizer::Adam;
