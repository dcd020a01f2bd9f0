//! Exact dense Gaussian-process computations. Everything here is `O(n³)` on
//! purpose; these routines exist to check the approximate machinery on small
//! problems and to simulate data.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::covariance::{cov_matrix_sym, cov_matrix_with, CovarianceFunction, HyperParams, PriorSpec, SeparableMaternExp, LN_2PI};
use crate::geo::SpatioTemporalPoint;

/// Largest problem the oracle accepts by default.
pub const DEFAULT_CAP: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{n} points exceed the dense oracle cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{0} matrix is not positive definite")]
    NotPositiveDefinite(&'static str),
}

/// The exact model `y = Xβ + W + ε` at a fixed set of points.
#[derive(Debug, Clone)]
pub struct DenseGP {
    points: Vec<SpatioTemporalPoint>,
    x: DMatrix<f64>,
    kernel: SeparableMaternExp,
    sigma: f64,
    zeta: f64,
    cov: DMatrix<f64>,
    cap: usize,
}

impl DenseGP {
    pub fn new(points: Vec<SpatioTemporalPoint>, x: DMatrix<f64>, psi: &HyperParams) -> Result<Self, OracleError> {
        Self::from_natural(points, x, psi.sigma(), psi.rho(), psi.phi(), psi.zeta())
    }

    /// Natural-scale constructor; `sigma = 0` and `zeta = 0` are allowed.
    pub fn from_natural(
        points: Vec<SpatioTemporalPoint>,
        x: DMatrix<f64>,
        sigma: f64,
        rho: f64,
        phi: f64,
        zeta: f64,
    ) -> Result<Self, OracleError> {
        Self::with_cap(points, x, sigma, rho, phi, zeta, DEFAULT_CAP)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_cap(
        points: Vec<SpatioTemporalPoint>,
        x: DMatrix<f64>,
        sigma: f64,
        rho: f64,
        phi: f64,
        zeta: f64,
        cap: usize,
    ) -> Result<Self, OracleError> {
        let n = points.len();
        if n > cap {
            return Err(OracleError::CapExceeded { n, cap });
        }
        if x.nrows() != n {
            return Err(OracleError::Dimension {
                what: "covariate rows",
                expected: n,
                got: x.nrows(),
            });
        }
        let valid = sigma >= 0.0 && zeta >= 0.0 && rho > 0.0 && phi > 0.0;
        if !valid || ![sigma, rho, phi, zeta].iter().all(|v| v.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "sigma={sigma}, rho={rho}, phi={phi}, zeta={zeta}"
            )));
        }
        let kernel = SeparableMaternExp::new(sigma, rho, phi);
        let cov = cov_matrix_sym(&kernel, &points);
        Ok(Self {
            points,
            x,
            kernel,
            sigma,
            zeta,
            cov,
            cap,
        })
    }

    pub fn points(&self) -> &[SpatioTemporalPoint] {
        &self.points
    }

    /// Covariance of the latent field at the points (nugget included).
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn check_y(&self, y: &[f64]) -> Result<(), OracleError> {
        if y.len() != self.points.len() {
            return Err(OracleError::Dimension {
                what: "response length",
                expected: self.points.len(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Draw `y = Xβ + chol(Σ) z + ζ e`.
    pub fn simulate(&self, beta: &[f64], seed: u64) -> Result<Vec<f64>, OracleError> {
        if beta.len() != self.x.ncols() {
            return Err(OracleError::Dimension {
                what: "coefficient length",
                expected: self.x.ncols(),
                got: beta.len(),
            });
        }
        let n = self.points.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let e = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let mut y = &self.x * DVector::from_column_slice(beta);
        if self.sigma > 0.0 {
            let chol = self.cov.clone().cholesky().ok_or(OracleError::NotPositiveDefinite("field covariance"))?;
            y += chol.l() * z;
        }
        if self.zeta > 0.0 {
            y += e * self.zeta;
        }
        Ok(y.iter().copied().collect())
    }

    /// Marginal covariance of `y` with `β ~ N(0, σ²_β I)` integrated out.
    fn marginal_cov(&self, beta_prior_var: f64) -> DMatrix<f64> {
        let mut c = &self.x * self.x.transpose() * beta_prior_var + &self.cov;
        for i in 0..c.nrows() {
            c[(i, i)] += self.zeta * self.zeta;
        }
        c
    }

    /// `log N(y; 0, X Σ_β Xᵀ + Σ + ζ² I)`.
    pub fn dense_evidence(&self, y: &[f64], priors: &PriorSpec) -> Result<f64, OracleError> {
        self.check_y(y)?;
        let n = y.len();
        let chol = self
            .marginal_cov(priors.beta_prior_var)
            .cholesky()
            .ok_or(OracleError::NotPositiveDefinite("marginal"))?;
        let yv = DVector::from_column_slice(y);
        let alpha = chol.solve(&yv);
        Ok(-0.5 * n as f64 * LN_2PI - 0.5 * chol.ln_determinant() - 0.5 * yv.dot(&alpha))
    }

    /// Conditional mean and variance of the response at `pred` given `y`.
    pub fn dense_predict(
        &self,
        y: &[f64],
        pred: &[SpatioTemporalPoint],
        x_pred: &DMatrix<f64>,
        priors: &PriorSpec,
    ) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
        self.check_y(y)?;
        if pred.len() > self.cap {
            return Err(OracleError::CapExceeded {
                n: pred.len(),
                cap: self.cap,
            });
        }
        if x_pred.nrows() != pred.len() || x_pred.ncols() != self.x.ncols() {
            return Err(OracleError::Dimension {
                what: "prediction covariates",
                expected: pred.len(),
                got: x_pred.nrows(),
            });
        }
        let bv = priors.beta_prior_var;
        let chol = self
            .marginal_cov(bv)
            .cholesky()
            .ok_or(OracleError::NotPositiveDefinite("marginal"))?;
        let cross = x_pred * self.x.transpose() * bv + cov_matrix_with(&self.kernel, pred, &self.points);
        let alpha = chol.solve(&DVector::from_column_slice(y));
        let mean = &cross * alpha;
        let w = chol.solve(&cross.transpose());
        let z2 = self.zeta * self.zeta;
        let var = (0..pred.len())
            .map(|i| {
                let xp = x_pred.row(i);
                let prior = xp.dot(&xp) * bv + self.kernel.covariance(&pred[i], &pred[i]) + z2;
                prior - cross.row(i).dot(&w.column(i).transpose())
            })
            .collect();
        Ok((mean.iter().copied().collect(), var))
    }
}
