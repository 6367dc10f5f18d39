//! Data-driven daily weather forecasting workbench.
//!
//! The pipeline is: hourly gridded archives ([`gridstore`]) are turned into
//! lagged daily means ([`slidewin`]), indexed across calendar years
//! ([`calendar`]), used to train a patch-size-1 spectral transformer
//! ([`afno`], [`trainer`]), rolled out autoregressively to day 7
//! ([`rollout`]) and verified with latitude-weighted RMSE/ACC
//! ([`scorecard`]). [`synthgen`] produces synthetic archives with known
//! dynamics, and [`experiments`] wires everything into the lag-augmentation
//! and training-period experiments.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix the
//! two precisions used in practice.

pub mod afno;
pub mod calendar;
pub mod experiments;
pub mod gridstore;
pub mod kv;
pub mod rollout;
pub mod scalar;
pub mod scorecard;
pub mod slidewin;
pub mod synthgen;
pub mod trainer;

pub use scalar::Scalar;

/// Training-precision model parameters.
pub type ModelState32 = afno::ModelState<f32>;
/// Verification-precision model parameters.
pub type ModelState64 = afno::ModelState<f64>;
pub type Gradients32 = afno::ModelState<f32>;
pub type Gradients64 = afno::ModelState<f64>;
