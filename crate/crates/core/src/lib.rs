pub mod autograd;
pub mod data;
pub mod error;
pub mod freq;
pub mod metrics;
pub mod model;
pub mod par;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
