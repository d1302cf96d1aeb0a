//! Numerical building blocks for self-supervised industrial anomaly
//! detection: seeded anomaly simulation, patch masking for generative
//! pre-training, the self-attention graph-convolution (SG) block with
//! analytic gradients, training losses, and ROC / sPRO evaluation.
//!
//! Every kernel is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root pin the common instantiations.

pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod sgblock;
pub mod simulate;
pub mod tensor;

pub use error::{Error, Result};
pub use noise::{BinaryMask, NoiseField};
pub use scalar::Scalar;
pub use tensor::{Matrix, Tensor3};

pub type Tensor3f = tensor::Tensor3<f32>;
pub type Tensor3d = tensor::Tensor3<f64>;
pub type Matrixf = tensor::Matrix<f32>;
pub type Matrixd = tensor::Matrix<f64>;
pub type SgParamsf = sgblock::SgParams<f32>;
pub type SgParamsd = sgblock::SgParams<f64>;
pub type ScoreMapf = metrics::ScoreMap<f32>;
pub type ScoreMapd = metrics::ScoreMap<f64>;
