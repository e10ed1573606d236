//! Dense-tensor core with forward and backward passes for exactly the layer
//! set the U-Net uses.
//!
//! All tensors here are `[B, C, T]` unless noted. Backward functions return
//! gradients of `sum(grad_out * forward(..))` with respect to each argument.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod pool;
mod tensor;

pub use activation::{relu, relu_backward, softmax_channels, softmax_channels_backward};
pub use batchnorm::{batchnorm1d, BatchNorm1d, BnCache, BnGrads, BN_EPS, BN_MOMENTUM};
pub use conv::{conv1d, conv1d_backward, Conv1d, ConvGrads};
pub use gradcheck::{grad_check, GradCheckReport, GroupError};
pub use pool::{
    concat_channels, maxpool1d, maxpool1d_backward, pooled_len, split_channels, upsample_nn,
    upsample_nn_backward,
};
pub use tensor::Tensor;

/// Whether batch normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
