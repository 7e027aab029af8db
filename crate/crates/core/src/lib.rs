//! Wavelet-domain clique network for single-image super-resolution.
//!
//! The core is generic over the floating-point scalar; `f64` is used for
//! gradient checks and reference runs, `f32` for training at scale.

pub mod ablation;
pub mod autograd;
pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fen;
pub mod irn;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParamStore64 = autograd::ParamStore<f64>;
pub type ParamStore32 = autograd::ParamStore<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
