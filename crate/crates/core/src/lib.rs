//! Adaptive block-scaled low-precision formats.

pub mod container;
pub mod error;
pub mod analysis;
pub mod formats;
pub mod mac;
pub mod quantizer;
pub mod rng;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
pub use formats::{builtin_format, Codebook, FormatId, FormatSpec, RoundMode, ScaleType};
pub use quantizer::{dequantize, quantize, BlockQuantResult, QuantOptions, QuantizedTensor};
pub use tensor::TensorView;
