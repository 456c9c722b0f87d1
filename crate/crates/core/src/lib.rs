pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fgir;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pnm;
pub mod scalar;
pub mod spectral;
pub mod ssm;
pub mod synth;
pub mod tensor;
pub mod training;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
