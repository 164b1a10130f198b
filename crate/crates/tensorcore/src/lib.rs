//! Minimal dense-tensor and reverse-mode differentiation substrate for
//! desk-scale CNNs: convolution, pooling, upsampling, dropout, and a named
//! parameter store with Adam.
//!
//! Training is f32 throughout and bitwise deterministic: convolutions run on
//! a single thread, dropout masks come from a counter-based RNG keyed on
//! (seed, stream), and parameter iteration is lexicographic.

mod conv;
mod error;
pub mod graph;
pub mod init;
pub mod params;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, NodeId};
pub use init::{he_uniform, init_rng};
pub use params::{Param, ParamStore};
pub use tensor::{Shape, Tensor};
