//! Hyperparameter posterior, mode search, importance sampling over the
//! hyperparameters, marginal summaries and posterior prediction.
//!
//! Every routine that only needs a log density is written against
//! [`LogDensity`], so tests can inject analytic targets. [`Model`] is the
//! implementation backed by the multi-resolution approximation.

mod model;
mod optim;
mod pipeline;
mod predict;
mod proposal;
mod sampling;
mod summary;

use thiserror::Error;

use crate::covariance::CovarianceError;
use crate::mra::MraError;

pub use model::{Evaluation, Model, PredictState};
pub use optim::{find_mode, ModeResult, OptimOptions};
pub use pipeline::{fit, FitOptions, FitResult};
pub use predict::{predict, Predictions};
pub use proposal::{build_proposal, Proposal};
pub use sampling::{
    importance_sample, importance_sample_density, normalize_log_weights, ISResult, ISSample, Retention, WeightedDraws,
};
pub(crate) use summary::Z975;
pub use summary::{
    marginal_summaries, summarize_mixture, summarize_weighted, CiMethod, MarginalSummary, SkewNormal, SKEW_LIMIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] MraError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("every evaluation of the log posterior failed")]
    AllEvaluationsFailed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A log density (up to a constant) over an unconstrained vector.
/// Non-finite or failed evaluations must be reported as `-inf`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> LogDensity for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.1)(x)
    }
}

/// `log Σ exp(v)` over the finite entries; `-inf` when there are none.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + v.iter().filter(|x| x.is_finite()).map(|x| (x - max).exp()).sum::<f64>().ln()
}
