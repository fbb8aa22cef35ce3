//! Dense real-matrix kernels shared by every memory component.

mod matrix;
mod memory;
mod mlp;
mod ops;
mod rng;

pub use matrix::Matrix;
pub use memory::{memory_attention, MemoryBlock};
pub use mlp::{mlp_forward, Activation, Linear, MlpParams};
pub use ops::{
    attention, cosine_similarity, grid_pool, mean_pool_tokens, normalized_similarity, scaled_dot_attention, sigmoid,
    silu, softmax_rows, ZERO_NORM,
};
pub(crate) use ops::token_mean;
pub use rng::{stream_id, ParamRng};
