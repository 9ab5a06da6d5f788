//! Boosted implicit neural video representations: temporally conditioned
//! decoders, a rate-aware training objective with entropy-coded
//! quantization, and a compact bitstream format.

pub mod autograd;
pub mod checkpoint;
pub mod codec;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod kv;
pub mod objectives;
pub mod params;
pub mod pipeline;
pub mod quant;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
