//! Graph WaveNet: encoder, stacked gated temporal convolutions each followed
//! by a pluggable spatial layer, skip concatenation and a one-shot decoder.
//!
//! Tensors are channels-last, `[B, T, N, C]`, inside the model.

mod gtcn;
mod wavenet;

pub use gtcn::{gtcn_forward, receptive_field, CausalConv, Gate, GtcnParams};
pub use wavenet::{
    to_channels_last, wavenet_forward, wavenet_forward_var, wavenet_predict, GraphContext, WaveNet, WaveNetConfig,
};
