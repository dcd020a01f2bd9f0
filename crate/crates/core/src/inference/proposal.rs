use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{InferenceError, LogDensity};
use crate::covariance::LN_2PI;

/// Gaussian importance proposal in the free log-hyperparameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    /// Whether eigenvalues of the negated Hessian had to be floored.
    pub regularized: bool,
}

impl Proposal {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self, InferenceError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(InferenceError::Dimension {
                what: "proposal covariance",
                expected: d,
                got: cov.nrows(),
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| InferenceError::InvalidArgument("proposal covariance is not positive definite".into()))?;
        let log_norm = -0.5 * d as f64 * LN_2PI - 0.5 * chol.ln_determinant();
        Ok(Self {
            precision: chol.inverse(),
            chol_l: chol.l(),
            mean,
            cov,
            log_norm,
            regularized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.dim(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        self.log_norm - 0.5 * d.dot(&(&self.precision * &d))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &self.chol_l * z;
        x.iter().zip(&self.mean).map(|(a, b)| a + b).collect()
    }
}

/// Negated Hessian of `target` at `x` by central second differences.
pub(crate) fn neg_hessian(target: &dyn LogDensity, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut offsets: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    for i in 0..d {
        offsets.push(vec![(i, h)]);
        offsets.push(vec![(i, -h)]);
    }
    for i in 0..d {
        for j in 0..i {
            for (si, sj) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                offsets.push(vec![(i, si), (j, sj)]);
            }
        }
    }
    let vals: Vec<f64> = offsets
        .par_iter()
        .map(|off| {
            let mut xk = x.to_vec();
            for &(i, s) in off {
                xk[i] += s;
            }
            target.log_density(&xk)
        })
        .collect();
    let f0 = vals[0];
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (vals[1 + 2 * i] - 2.0 * f0 + vals[2 + 2 * i]) / (h * h);
    }
    let mut k = 1 + 2 * d;
    for i in 0..d {
        for j in 0..i {
            let v = (vals[k] - vals[k + 1] - vals[k + 2] + vals[k + 3]) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
            k += 4;
        }
    }
    let hess = hess.map(|v| if v.is_finite() { v } else { 0.0 });
    -(&hess + hess.transpose()) * 0.5
}

/// Gaussian proposal centred at `mode` with covariance equal to the inverse
/// negated Hessian. Eigenvalues below `1e-6` of the largest are raised to
/// that floor so the covariance is always positive definite.
pub fn build_proposal(target: &dyn LogDensity, mode: &[f64], h: f64) -> Proposal {
    let d = mode.len();
    let a = neg_hessian(target, mode, h);
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (cov, regularized) = if !(max > 0.0) {
        log::warn!("negated Hessian has no positive eigenvalue; using the identity as proposal covariance");
        (DMatrix::identity(d, d), true)
    } else {
        let floor = 1e-6 * max;
        let mut regularized = false;
        let inv = eig.eigenvalues.map(|l| {
            if l < floor {
                regularized = true;
                1.0 / floor
            } else {
                1.0 / l
            }
        });
        let u = &eig.eigenvectors;
        let cov = u * DMatrix::from_diagonal(&inv) * u.transpose();
        ((&cov + cov.transpose()) * 0.5, regularized)
    };
    if regularized {
        log::warn!("proposal covariance regularized by eigenvalue flooring");
    }
    let mut prop = Proposal::new(mode.to_vec(), cov).expect("floored covariance is positive definite");
    prop.regularized = regularized;
    prop
}
