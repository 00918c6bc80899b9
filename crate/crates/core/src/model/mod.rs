//! The tongue-detection network: topology, training, checkpoints, transfer.

pub mod checkpoint;
pub mod network;
pub mod split;
pub mod train;

use thiserror::Error;

use crate::tensor::TensorError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainingMetadata};
pub use network::{build_paper_network, predict, ForwardMode, LayerSpec, Network, NetworkGrads, NetworkSpec, Tape};
pub use split::stratified_split;
pub use train::{fine_tune, train, EpochRecord, TrainConfig, TrainSample, TrainingLog};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("transfer error: {0}")]
    Transfer(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
