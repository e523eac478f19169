//! PointMLP-style segmentation of mesh cells: a tensor autodiff tape, the
//! encoder/decoder network, Adam training and checkpoint I/O.

pub mod checkpoint;
pub mod network;
pub mod tape;
pub mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use network::{forward, ModelConfig, ModelParams, Topology};
pub use train::{
    loss_ce, lr_schedule, measure_inference, predict, train, Adam, EpochRecord, InferenceTiming, Prediction,
    TrainConfig, TrainOutput,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
