//! Fully Bayesian spatiotemporal Gaussian-process inference for large
//! datasets.
//!
//! The latent field is replaced by a multi-resolution approximation (MRA)
//! whose basis functions have nested compact supports, which makes the full
//! conditional precision of the mean parameters sparse. Covariance
//! hyperparameters are integrated out with importance sampling around the
//! posterior mode, and predictive moments are assembled with the importance
//! weights.
//!
//! Module map:
//!
//! * [`geo`]: coordinates and great-circle distance.
//! * [`covariance`]: Matérn(ν = 1.5) × exponential kernel, hyperparameters, priors.
//! * [`partition`]: recursive median splitting and knot placement.
//! * [`sparse`]: compressed sparse storage and an LDLᵀ factorization whose
//!   symbolic analysis is reusable across numeric values.
//! * [`mra`]: basis functions, prior blocks, design matrix and full conditional.
//! * [`inference`]: hyperparameter posterior, mode search, importance
//!   sampling, marginal summaries and prediction.
//! * [`oracle`]: exact dense Gaussian-process computations for small instances.
//! * [`harness`]: CSV ingestion, run configuration, metrics and the batch commands.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod geo;
pub mod harness;
pub mod inference;
pub mod mra;
pub mod oracle;
pub mod partition;
pub mod sparse;

pub use covariance::{HyperParams, PriorSpec};
pub use geo::SpatioTemporalPoint;
