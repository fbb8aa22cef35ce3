//! Question-guided geometric memory for streaming frame features.

pub mod cggf;
pub mod dims;
pub mod error;
pub mod fgcb;
pub mod harness;
pub mod numerics;
pub mod pipeline;
pub mod sgeb;
pub mod synth;

pub use dims::Dims;
pub use error::{Error, Result};
pub use numerics::Matrix;
