//! GRU-Net style nuclei segmentation in pure Rust: a MultiResUNet backbone
//! with controlled dense-residual skip connections and a Gaussian,
//! text-statistics-conditioned attention module, plus losses, metrics, data
//! handling and a seeded training harness.

pub mod autodiff;
pub mod backbone;
pub mod cdrb;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gdam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod params;
pub mod scalar;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the CLI and the acceptance suites.
pub type Real = f64;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
