use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::summary::summarize_mixture;
use super::{CiMethod, ISResult, InferenceError, Model, PredictState};
use crate::geo::SpatioTemporalPoint;

/// Posterior predictive summaries, one entry per prediction point.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub method: Vec<CiMethod>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Per-sample predictive mean `h·v̂` and variance `hᵀQ⁻¹h + ζ²` at each point.
fn sample_moments(state: &PredictState, points: &[SpatioTemporalPoint], x_pred: &DMatrix<f64>) -> Result<Vec<(f64, f64)>, InferenceError> {
    let p = state.p;
    let zeta2 = state.psi.zeta().powi(2);
    points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| {
            let (fi, fv) = state.basis.evaluate_basis_row(pt);
            let mut idx: Vec<usize> = (0..p).collect();
            let mut vals: Vec<f64> = x_pred.row(i).iter().copied().collect();
            idx.extend(fi.into_iter().map(|c| c + p));
            vals.extend(fv);
            let mean: f64 = idx.iter().zip(&vals).map(|(&c, v)| v * state.mean[c]).sum();
            let quad = state
                .factor
                .inv_quad_form(&idx, &vals)
                .map_err(crate::mra::MraError::from)?;
            Ok((mean, quad + zeta2))
        })
        .collect()
}

/// Combine the draws: mean `Σ ωᵢ mᵢ`, variance `Σ ωᵢ vᵢ + Σ ωᵢ (mᵢ − m̄)²`,
/// and a 95% interval from the moment-matched skew-normal of the mixture.
/// Draws without a retained state are re-evaluated.
pub fn predict(
    model: &Model,
    is: &ISResult,
    points: &[SpatioTemporalPoint],
    x_pred: &DMatrix<f64>,
) -> Result<Predictions, InferenceError> {
    if x_pred.nrows() != points.len() || x_pred.ncols() != model.p() {
        return Err(InferenceError::Dimension {
            what: "prediction covariates",
            expected: model.p(),
            got: x_pred.ncols(),
        });
    }
    let live: Vec<_> = is.samples.iter().filter(|s| s.weight > 0.0).collect();
    let weights: Vec<f64> = live.iter().map(|s| s.weight).collect();
    let mut per_sample: Vec<Vec<(f64, f64)>> = Vec::with_capacity(live.len());
    for s in &live {
        let state = match &s.state {
            Some(st) => Arc::clone(st),
            None => Arc::new(PredictState::from(model.evaluate(&s.psi)?)),
        };
        per_sample.push(sample_moments(&state, points, x_pred)?);
    }

    let n = points.len();
    let summaries: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| {
            let means: Vec<f64> = per_sample.iter().map(|m| m[j].0).collect();
            let vars: Vec<f64> = per_sample.iter().map(|m| m[j].1).collect();
            summarize_mixture("y", &means, &vars, &weights)
        })
        .collect();
    let mut out = Predictions {
        mean: Vec::with_capacity(n),
        sd: Vec::with_capacity(n),
        ci_low: Vec::with_capacity(n),
        ci_high: Vec::with_capacity(n),
        method: Vec::with_capacity(n),
    };
    for s in summaries {
        out.mean.push(s.mean);
        out.sd.push(s.sd);
        out.ci_low.push(s.ci_low);
        out.ci_high.push(s.ci_high);
        out.method.push(s.method);
    }
    Ok(out)
}
