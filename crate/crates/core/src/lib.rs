//! Safe meta-Bayesian optimization.
//!
//! Kernel hyper-parameters are chosen by a calibration/sharpness frontier
//! search over meta-training data, GP priors are meta-learned with a
//! function-space KL regularizer, and the resulting models drive SafeOpt or
//! GoOSE over a discretized domain.

pub mod autodiff;
pub mod calibration;
pub mod env;
pub mod error;
pub mod frontier;
pub mod gp;
pub mod linalg;
pub mod meta;
pub mod nn;
pub mod safe_bo;

pub use error::GpError;
pub use gp::{ConfidenceLevel, GpPrior, KernelConfig, Posterior};
