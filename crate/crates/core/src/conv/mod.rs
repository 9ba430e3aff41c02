//! Reference sparse convolution: kernel maps, forward and adjoint, plus the
//! LayerNorm / ReLU / residual building blocks the backbone is made of.

mod kernel_map;
mod layers;
mod residual;
mod sparse_conv;

pub use kernel_map::KernelMap;
pub use layers::{
    layer_norm_backward, layer_norm_forward, relu_backward, relu_inplace, LayerNormCache, LayerNormParams,
};
pub use residual::{
    residual_block, residual_block_backward, residual_block_forward, ResidualBlockParams, ResidualCache,
};
pub use sparse_conv::{sparse_conv_backward, sparse_conv_forward, ConvGrads, ConvWeights};
