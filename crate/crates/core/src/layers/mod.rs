//! Model building blocks. Each layer owns [`ParamId`](crate::params::ParamId)s
//! into a shared [`ParamStore`](crate::params::ParamStore) and records its
//! forward pass onto the graph held by a [`Ctx`](crate::params::Ctx).

mod differential;
mod fusion;
mod neighbor;
mod positional;
mod recurrent;
mod residual;
mod transformer;

pub use differential::{differential_split, embed_with_pe, WindowTriple};
pub use fusion::{FusionOutput, SlidingFusion};
pub use neighbor::{NeighborAttention, NeighborAttentionOutput, NeighborHead};
pub use positional::{positional_encode, PositionalEncoding};
pub use recurrent::{Gate, Lstm};
pub use residual::{ResidualBlock, CONV_KERNELS, LSTM_HIDDEN};
pub use transformer::{DecoderBlock, EncoderBlock, FeedForward, LayerNorm, Linear, MultiHeadAttention};
