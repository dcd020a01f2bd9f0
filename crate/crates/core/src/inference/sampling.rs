use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{log_sum_exp, InferenceError, LogDensity, Model, PredictState, Proposal};
use crate::covariance::HyperParams;

/// Fraction of `n_is` below which the effective sample size is flagged.
pub const ESS_WARN_FRACTION: f64 = 0.05;

/// Draws with their normalized importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDraws {
    pub draws: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub log_proposal: Vec<f64>,
    pub weights: Vec<f64>,
    /// `log ĉ = log Σ exp(rᵢ) − log n`, the log normalizing-constant estimate.
    pub log_c: f64,
    pub ess: f64,
    pub degenerate: bool,
}

/// Normalized weights `exp(rᵢ − log Σ exp r)`, the log normalizing-constant
/// estimate, and the effective sample size.
pub fn normalize_log_weights(log_ratio: &[f64]) -> Result<(Vec<f64>, f64, f64), InferenceError> {
    let lse = log_sum_exp(log_ratio);
    if !lse.is_finite() {
        return Err(InferenceError::AllEvaluationsFailed);
    }
    let max = log_ratio.iter().copied().filter(|r| r.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_ratio
        .iter()
        .map(|r| if r.is_finite() { (r - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let ess = 1.0 / sum_sq;
    Ok((weights, lse - (log_ratio.len() as f64).ln(), ess))
}

fn draw_all(prop: &Proposal, n_is: usize, seed: u64) -> Result<Vec<Vec<f64>>, InferenceError> {
    if n_is < 2 {
        return Err(InferenceError::InvalidArgument(format!("need at least 2 importance draws, got {n_is}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_is).map(|_| prop.sample(&mut rng)).collect())
}

fn ess_check(ess: f64, n_is: usize) -> bool {
    let degenerate = ess < ESS_WARN_FRACTION * n_is as f64;
    if degenerate {
        log::warn!("importance weights are degenerate: ESS {ess:.2} of {n_is} draws");
    }
    degenerate
}

/// Importance sampling of an arbitrary log density.
pub fn importance_sample_density(
    target: &dyn LogDensity,
    prop: &Proposal,
    n_is: usize,
    seed: u64,
) -> Result<WeightedDraws, InferenceError> {
    let draws = draw_all(prop, n_is, seed)?;
    let log_target: Vec<f64> = draws.par_iter().map(|x| target.log_density(x)).collect();
    let log_proposal: Vec<f64> = draws.iter().map(|x| prop.log_pdf(x)).collect();
    let ratio: Vec<f64> = log_target.iter().zip(&log_proposal).map(|(t, p)| t - p).collect();
    let (weights, log_c, ess) = normalize_log_weights(&ratio)?;
    Ok(WeightedDraws {
        degenerate: ess_check(ess, n_is),
        draws,
        log_target,
        log_proposal,
        weights,
        log_c,
        ess,
    })
}

/// Whether each draw keeps what prediction needs, or prediction rebuilds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retention {
    #[default]
    Keep,
    Recompute,
}

/// One importance draw of the hyperparameters.
#[derive(Debug, Clone)]
pub struct ISSample {
    pub psi: HyperParams,
    /// Coordinates in the sampled (free) space.
    pub free: Vec<f64>,
    pub log_unnorm_post: f64,
    pub log_proposal: f64,
    pub weight: f64,
    /// Full-conditional means and variances of the fixed effects.
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
    pub state: Option<Arc<PredictState>>,
}

#[derive(Debug, Clone)]
pub struct ISResult {
    pub samples: Vec<ISSample>,
    pub log_c: f64,
    pub ess: f64,
    pub degenerate: bool,
}

impl ISResult {
    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight).collect()
    }
}

/// Importance sampling of the model's hyperparameter posterior. Draws are
/// evaluated in parallel and share the model's symbolic factorization.
pub fn importance_sample(
    model: &Model,
    prop: &Proposal,
    n_is: usize,
    seed: u64,
    retention: Retention,
) -> Result<ISResult, InferenceError> {
    if prop.dim() != model.priors().n_free() {
        return Err(InferenceError::Dimension {
            what: "proposal",
            expected: model.priors().n_free(),
            got: prop.dim(),
        });
    }
    let draws = draw_all(prop, n_is, seed)?;
    let p = model.p();
    let mut samples: Vec<ISSample> = draws
        .into_par_iter()
        .map(|free| {
            let log_proposal = prop.log_pdf(&free);
            let psi = model.psi_from_free(&free)?;
            let mut sample = ISSample {
                psi,
                free,
                log_unnorm_post: f64::NEG_INFINITY,
                log_proposal,
                weight: 0.0,
                beta_mean: Vec::new(),
                beta_var: Vec::new(),
                state: None,
            };
            match model.evaluate(&psi) {
                Ok(eval) if eval.log_posterior.is_finite() => {
                    sample.log_unnorm_post = eval.log_posterior;
                    sample.beta_mean = eval.fc.mean[..p].to_vec();
                    let n = eval.fc.mean.len();
                    for j in 0..p {
                        let mut e = vec![0.0; n];
                        e[j] = 1.0;
                        let col = eval.fc.factor.solve_vec(&e).map_err(crate::mra::MraError::from)?;
                        sample.beta_var.push(col[j]);
                    }
                    if retention == Retention::Keep {
                        sample.state = Some(Arc::new(PredictState::from(eval)));
                    }
                }
                Ok(_) => log::warn!("non-finite log posterior at {psi:?}"),
                Err(err) => log::warn!("log posterior evaluation failed at {psi:?}: {err}"),
            }
            Ok(sample)
        })
        .collect::<Result<_, InferenceError>>()?;
    let ratio: Vec<f64> = samples.iter().map(|s| s.log_unnorm_post - s.log_proposal).collect();
    let (weights, log_c, ess) = normalize_log_weights(&ratio)?;
    for (s, w) in samples.iter_mut().zip(weights) {
        s.weight = w;
    }
    Ok(ISResult {
        samples,
        log_c,
        ess,
        degenerate: ess_check(ess, n_is),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn identical_target_gives_uniform_weights() {
        let prop = Proposal::new(vec![0.5, -1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])).unwrap();
        let p2 = prop.clone();
        let target = (2, move |x: &[f64]| p2.log_pdf(x));
        let res = importance_sample_density(&target, &prop, 64, 3).unwrap();
        assert!(res.weights.iter().all(|&w| w == 1.0 / 64.0));
        assert!(res.log_c.abs() < 1e-12);
        assert!((res.ess - 64.0).abs() < 1e-9);
    }

    #[test]
    fn constant_ratio_cancels() {
        let prop = Proposal::new(vec![0.0], DMatrix::from_element(1, 1, 1.5)).unwrap();
        let p2 = prop.clone();
        let target = (1, move |x: &[f64]| p2.log_pdf(x) + 2f64.ln());
        let res = importance_sample_density(&target, &prop, 100, 4).unwrap();
        assert!(res.weights.iter().all(|&w| (w - 0.01).abs() < 1e-15));
        assert!((res.log_c.exp() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_integral_is_recovered() {
        let prop = Proposal::new(vec![0.0], DMatrix::from_element(1, 1, 4.0)).unwrap();
        let target = (1, |x: &[f64]| -0.5 * x[0] * x[0]);
        let n = 10_000;
        let res = importance_sample_density(&target, &prop, n, 11).unwrap();
        let ratios: Vec<f64> = res.log_target.iter().zip(&res.log_proposal).map(|(t, p)| (t - p).exp()).collect();
        let mean = ratios.iter().sum::<f64>() / n as f64;
        let se = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        let c = res.log_c.exp();
        assert!((c - (2.0 * std::f64::consts::PI).sqrt()).abs() < 3.0 * se, "c = {c}, se = {se}");
        let total: f64 = res.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_are_flagged() {
        let prop = Proposal::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let target = (1, |x: &[f64]| -500.0 * (x[0] - 3.0).powi(2));
        let res = importance_sample_density(&target, &prop, 50, 1).unwrap();
        assert!(res.degenerate);
    }

    #[test]
    fn failures_get_zero_weight() {
        let (w, _, _) = normalize_log_weights(&[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert_eq!(
            normalize_log_weights(&[f64::NEG_INFINITY; 3]).unwrap_err(),
            InferenceError::AllEvaluationsFailed
        );
        let prop = Proposal::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(importance_sample_density(&(1, |_: &[f64]| 0.0), &prop, 1, 0).is_err());
    }
}
