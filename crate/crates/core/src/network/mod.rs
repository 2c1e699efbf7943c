//! The hourglass segmentation network: declarative spec, forward and
//! backward passes, training loop and checkpoints.

mod checkpoint;
mod model;
mod spec;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

pub use model::{images_to_tensor, pixels_to_tensor, ForwardCache, Mode, Model};
pub(crate) use checkpoint::Reader;
pub(crate) use model::mix_seed;
pub use spec::{
    build_network, Activation, LayerDesc, LayerKind, NetworkSpec, ParamCount, Profile,
    CANONICAL_ENCODER, CANONICAL_SIDE, DROPOUT_P, LEAKY_SLOPE, REDUCED_ENCODER, REDUCED_SIDE,
};
pub use train::{dataset_loss, train, TrainConfig, TrainReport, Trainer};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("image is {}x{}, network expects {want}x{want}", got.0, got.1)]
    ImageSize { got: (usize, usize), want: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty training set")]
    EmptyDataset,
    #[error("sample {sample}: label {label} outside [0, {k})")]
    LabelOutOfRange { sample: usize, label: usize, k: usize },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
