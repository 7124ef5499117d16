//! A small convolutional classifier with hand-written reverse-mode gradients,
//! Adam, Grad-CAM, and loading of three-channel pretrained first layers.
//!
//! Everything runs in `f64`. Batches are `[B, 1, frames, mels]`; samples are
//! processed independently (in parallel) and their gradients summed in batch
//! order, so results do not depend on the thread count.

mod adam;
mod gradcam;
mod layers;
mod loss;
mod model;
mod tensor;
mod transfer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcam::{cam_from, CamMap};
pub use layers::LayerSpec;
pub use loss::{cross_entropy_soft, softmax};
pub use model::{Architecture, Gradients, Model};
pub use tensor::Tensor;
pub use transfer::{aggregate_input_channels, load_into, read_checkpoint, save_model, write_checkpoint, CHECKPOINT_MAGIC};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layers do not compose: {0}")]
    ShapeComposeError(String),
    #[error("expected 3 input channels, got {0}")]
    WrongChannelCount(usize),
    #[error("target row {row} sums to {sum}, expected 1")]
    InvalidTarget { row: usize, sum: f64 },
    #[error("backward called without a matching forward pass")]
    StaleCache,
    #[error("no Grad-CAM cache; run forward and backward first")]
    NoCache,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Initialise a model; see [`Model::new`].
pub fn init_model(arch: &Architecture, n_classes: usize, seed: u64) -> Result<Model, NnError> {
    Model::new(arch, n_classes, seed)
}
