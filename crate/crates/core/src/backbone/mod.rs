//! Encoder built from LinK modules, with receptive-field probing and a toy
//! training loop.

mod encoder;
mod erf;
mod module;
mod train;

pub use encoder::{
    encoder_backward, encoder_forward, encoder_forward_stages, ConvNormParams, EncoderCache, EncoderConfig,
    EncoderParams, StageParams, NUM_STAGES, RESIDUAL_BLOCKS,
};
pub use erf::{bypass_support_box, erf_map, ErfMap};
pub use module::{
    link_module_backward, link_module_forward, LinkModuleCache, LinkModuleConfig, LinkModuleParams, StageMaps,
};
pub use train::{downsample_labels, toy_train, ToyModel};
