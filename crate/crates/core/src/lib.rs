//! Convex iterative estimators for binary-choice index models.
//!
//! The model is `y = 1{xᵀβ₀ > ε}` with an error CDF `g` that may be known or
//! unknown. Three estimators are provided:
//!
//! * per-observation SGD when `g` is known ([`run_sgd_known_g`]);
//! * sieve SGD, which alternates full-sample gradient steps with a series-logit
//!   estimate of `g` on the current index ([`run_ssgd_group`]);
//! * the average of the sieve SGD iterates ([`run_ssgd_average`]), which comes
//!   with a plug-in sandwich covariance ([`inference`]).
//!
//! The [`sim`] module generates simulated designs and runs replicated fits.

pub mod config;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod logit;
pub mod model;
pub mod quadrature;
pub mod reduce;
mod serde_helpers;
pub mod sieve;
pub mod sim;

pub use config::{default_tuning, learning_rate, InitStrategy, SsgdConfig, Tuning};
pub use error::{DatasetViolation, Result, SsgdError};
pub use estimator::{
    group_update, normalize_scale, normalize_scale_at, run_sgd_known_g, run_ssgd_average, run_ssgd_group,
    EstimatorKind, FitResult, IteratePath,
};
pub use inference::{
    confidence_intervals, estimate_sigma1, estimate_sigma2, sandwich, sandwich_for_result, Interval, SandwichOptions,
    SandwichVcov,
};
pub use model::{loss_gradient, loss_value, validate_dataset, Beta, Dataset, IndexCdf, LinkFunction, LinkKind};
pub use sieve::{fit_series_logit, sieve_cdf, SieveBasis, SieveFit};
