//! Segmentation model: a frozen transformer feature extractor, a trainable
//! convolutional fusion decoder on a reverse-mode tape, and the training
//! loop that ties them together.

mod act;
mod checkpoint;
mod decoder;
mod encoder;
mod gradcheck;
mod loss;
mod optim;
mod tape;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decoder::{decoder_forward, pyramid_dims, DecoderConfig, DecoderForward, DecoderState};
pub use encoder::{BackboneConfig, Encoder};
pub use gradcheck::{check_gradients, GradReport, GroupReport};
pub use loss::{bce_dice_loss, LossWeights, PROB_CLAMP};
pub use optim::{cosine_lr, AdamW};
pub use tape::{NodeId, Tape};
pub use tensor::{resize_chw, Tensor};
pub use train::{
    cache_features, evaluate_decoder, predict_prob, train_decoder, EpochRow, LearningCurve,
    TrainSample, TrainedModel, Trainer,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input {height}x{width} is not divisible into {patch}x{patch} patches")]
    Divisibility { height: usize, width: usize, patch: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
