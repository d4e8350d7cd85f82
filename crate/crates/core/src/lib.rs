//! Multi-frequency EIT image reconstruction with an untrained multi-branch
//! attention network used as an image prior.

pub mod autodiff;
pub mod error;
pub mod fem;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod net;
pub mod recon;
pub mod render;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Double-precision instantiations of the generic types.
pub type Matrix = linalg::Matrix<f64>;
pub type Jacobian = model::SensitivityMatrix<f64>;
pub type Frames = model::MeasurementFrameSet<f64>;
pub type Stack = model::ConductivityStack<f64>;
pub type Params = autodiff::ParamSet<f64>;
pub type Reconstruction = recon::ReconResult<f64>;
