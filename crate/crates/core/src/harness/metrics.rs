use serde::Serialize;

use super::HarnessError;

/// Holdout accuracy of a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub mspe: f64,
    pub medspe: f64,
    /// Fraction of truths inside their 95% intervals.
    pub coverage: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn compute_metrics(mean: &[f64], ci_low: &[f64], ci_high: &[f64], truth: &[f64]) -> Result<Metrics, HarnessError> {
    let n = truth.len();
    if mean.len() != n || ci_low.len() != n || ci_high.len() != n {
        return Err(HarnessError::Data(format!(
            "metrics need aligned rows: {} predictions, {} truths",
            mean.len(),
            n
        )));
    }
    if n == 0 {
        return Err(HarnessError::Data("metrics need at least one row".into()));
    }
    let sq: Vec<f64> = mean.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).collect();
    let inside = (0..n).filter(|&i| ci_low[i] <= truth[i] && truth[i] <= ci_high[i]).count();
    Ok(Metrics {
        n,
        mspe: sq.iter().sum::<f64>() / n as f64,
        medspe: median(sq),
        coverage: inside as f64 / n as f64,
    })
}
