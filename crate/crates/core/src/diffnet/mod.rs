//! Minimal differentiable computation: tensors, the layer kernels a DC-GAN
//! needs, reverse-mode gradients over sequential stacks, and Adam.

mod adam;
mod checkpoint;
pub mod gradcheck;
pub mod kernels;
mod network;
mod real;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kernels::{
    activation, batch_norm, conv2d, conv_transpose2d, dense, Activation, KERNEL, PADDING, STRIDE,
};
pub use network::{Layer, LayerSpec, Mode, Network, Trace, BN_MOMENTUM, INIT_STD};
pub use real::{gemm, Op, Real};
pub use tensor::Tensor;
