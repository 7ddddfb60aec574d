//! Minimal dense/attention kernel with hand-written backward passes.

mod attention;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod params;
mod tensor;

pub use attention::{EncoderBlock, EncoderCache, TokenEncoder, TokenEncoderCache};
pub use layers::{
    leaky_relu, leaky_relu_backward, masked_log_softmax, masked_softmax, LayerNorm,
    LayerNormCache, Linear, Mlp, MlpCache, LEAKY_SLOPE, MASK_PENALTY,
};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::Mat;
