//! Tensor kernels with hand-written backward passes: exactly what the
//! hourglass segmentation network needs, nothing more.

mod adam;
mod conv;
mod gemm;
mod gradcheck;
mod layers;
mod loss;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use conv::{conv2d, conv2d_backward, upconv2d, upconv2d_backward, ConvGrads, Padding};
pub use gemm::{gemm, Op};
pub use gradcheck::{grad_check, relative_error, GradCheckCase, FD_STEP, KINK_MARGIN, REL_ERR_FLOOR};
pub use layers::{
    batchnorm, batchnorm_backward, concat_channels, dropout, dropout_backward, leaky_relu,
    leaky_relu_backward, relu, split_channels, BnCache, BN_EPS,
};
pub use loss::{softmax_channels, softmax_cross_entropy, LossValue};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("label {label} outside [0, {k})")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("{0}")]
    Config(String),
}
