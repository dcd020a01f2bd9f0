use super::{
    build_proposal, find_mode, importance_sample, marginal_summaries, ISResult, InferenceError, MarginalSummary,
    ModeResult, Model, OptimOptions, Proposal, Retention,
};

/// Settings for the full mode-finding, proposal and importance-sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Starting point in the free coordinates; the prior mean when absent.
    pub start: Option<Vec<f64>>,
    pub n_is: usize,
    pub seed: u64,
    pub grad_step: f64,
    pub hess_step: f64,
    pub retention: Retention,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 25,
            start: None,
            n_is: 200,
            seed: 1,
            grad_step: 1e-4,
            hess_step: 1e-3,
            retention: Retention::Keep,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mode: ModeResult,
    pub proposal: Proposal,
    pub is: ISResult,
    pub hyper: Vec<MarginalSummary>,
    pub beta: Vec<MarginalSummary>,
}

pub fn fit(model: &Model, opts: &FitOptions, beta_names: &[String]) -> Result<FitResult, InferenceError> {
    if beta_names.len() != model.p() {
        return Err(InferenceError::Dimension {
            what: "covariate names",
            expected: model.p(),
            got: beta_names.len(),
        });
    }
    let start = opts.start.clone().unwrap_or_else(|| model.priors().prior_mean_free());
    let optim = OptimOptions {
        max_iter: opts.max_iter,
        grad_step: opts.grad_step,
        ..OptimOptions::default()
    };
    let mode = find_mode(model, &start, &optim)?;
    log::info!(
        "mode found after {} iterations ({} evaluations), log posterior {:.6}",
        mode.iterations,
        mode.evaluations,
        mode.value
    );
    let proposal = build_proposal(model, &mode.x, opts.hess_step);
    let is = importance_sample(model, &proposal, opts.n_is, opts.seed, opts.retention)?;
    let (hyper, beta) = marginal_summaries(&is, beta_names);
    Ok(FitResult {
        mode,
        proposal,
        is,
        hyper,
        beta,
    })
}
