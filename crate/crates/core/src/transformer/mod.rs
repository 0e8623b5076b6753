//! The captioning Transformer: a one-block encoder over CNN feature grids and
//! a one-block decoder (causal self-attention, cross-attention, feed-forward)
//! with a vocabulary head.

mod attention;
mod config;
mod model;
mod params;
mod posenc;

pub use attention::{
    causal_mask, multi_head_attention, scaled_dot_product_attention, AttentionMask,
    AttentionOutput,
};
pub use config::{ModelConfig, MAX_VOCAB, NUM_SPECIALS};
pub use model::{caption_loss, decoder_forward, encoder_forward, CaptionModel};
pub use params::{slot_shape, Attention, ModelParams, Norm, ParamSet};
pub use posenc::positional_encoding;
