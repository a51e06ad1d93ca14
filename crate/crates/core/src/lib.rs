//! Sequential Monte Carlo smoothing of additive functionals in state-space
//! models.
//!
//! The crate provides a bootstrap particle filter, four smoothers for
//! additive functionals (forward-only recursion, batch FFBS, path-space and
//! fixed-lag), exact references for linear-Gaussian and finite-state models,
//! and recursive parameter estimators built on the forward recursion.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod experiment;
pub mod filter;
pub mod kernel;
pub mod learn;
pub mod model;
pub mod oracle;
pub mod smoother;

pub use error::{Error, Result};
pub use exec::Execution;
pub use filter::{ParticleSet, ResamplingPolicy, ResamplingScheme};
pub use model::{AnyModel, FiniteHmm, LinearGaussianModel, ModelParams, StateSpaceModel, StochasticVolatilityModel};
pub use smoother::{AdditiveFunctional, Blend, EstimatorKind};
