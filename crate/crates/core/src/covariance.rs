//! Separable space-time covariance, hyperparameters and their priors.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geo::{haversine_km, temporal_gap, SpatioTemporalPoint};

/// Relative nugget added to the variance when two sites coincide exactly.
pub const NUGGET: f64 = 1e-5;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Matérn correlation with smoothness 1.5, evaluated in closed form.
pub fn matern15(dist_km: f64, rho_km: f64) -> Result<f64, CovarianceError> {
    if !(rho_km > 0.0) || !rho_km.is_finite() {
        return Err(CovarianceError::InvalidArgument(format!(
            "spatial range must be positive, got {rho_km}"
        )));
    }
    if !(dist_km >= 0.0) {
        return Err(CovarianceError::InvalidArgument(format!(
            "distance must be non-negative, got {dist_km}"
        )));
    }
    Ok(matern15_unchecked(dist_km, rho_km))
}

#[inline]
fn matern15_unchecked(d: f64, rho: f64) -> f64 {
    let u = SQRT_3 * d / rho;
    (1.0 + u) * (-u).exp()
}

/// Exponential temporal correlation `exp(-gap / phi)`.
pub fn temporal_corr(gap_days: f64, phi_days: f64) -> Result<f64, CovarianceError> {
    if !(phi_days > 0.0) || !phi_days.is_finite() {
        return Err(CovarianceError::InvalidArgument(format!(
            "temporal range must be positive, got {phi_days}"
        )));
    }
    if !(gap_days >= 0.0) {
        return Err(CovarianceError::InvalidArgument(format!(
            "gap must be non-negative, got {gap_days}"
        )));
    }
    Ok((-gap_days / phi_days).exp())
}

/// Log-scale covariance hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub log_sigma: f64,
    pub log_rho: f64,
    pub log_phi: f64,
    pub log_zeta: f64,
}

pub const HYPER_NAMES: [&str; 4] = ["log_sigma", "log_rho", "log_phi", "log_zeta"];

impl HyperParams {
    pub fn new(log_sigma: f64, log_rho: f64, log_phi: f64, log_zeta: f64) -> Result<Self, CovarianceError> {
        Self::from_array([log_sigma, log_rho, log_phi, log_zeta])
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self, CovarianceError> {
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(CovarianceError::InvalidArgument(format!(
                "{} must be finite, got {}",
                HYPER_NAMES[i], a[i]
            )));
        }
        Ok(Self {
            log_sigma: a[0],
            log_rho: a[1],
            log_phi: a[2],
            log_zeta: a[3],
        })
    }

    /// Build from natural-scale values (all strictly positive).
    pub fn from_natural(sigma: f64, rho: f64, phi: f64, zeta: f64) -> Result<Self, CovarianceError> {
        Self::from_array([sigma.ln(), rho.ln(), phi.ln(), zeta.ln()])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.log_sigma, self.log_rho, self.log_phi, self.log_zeta]
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn rho(&self) -> f64 {
        self.log_rho.exp()
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn zeta(&self) -> f64 {
        self.log_zeta.exp()
    }

    /// The latent-field kernel these hyperparameters define.
    pub fn kernel(&self) -> SeparableMaternExp {
        SeparableMaternExp::new(self.sigma(), self.rho(), self.phi())
    }
}

/// Priors on the fixed effects and on the log hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// Prior variance of every fixed-effect coefficient (diagonal prior).
    pub beta_prior_var: f64,
    pub hyper_prior_mean: [f64; 4],
    pub hyper_prior_sd: [f64; 4],
    /// When set, `log_zeta` is held at this value and excluded from the
    /// hyperprior and from the sampled space.
    pub fixed_log_zeta: Option<f64>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta_prior_var: 100.0,
            hyper_prior_mean: [0.0; 4],
            hyper_prior_sd: [2.0; 4],
            fixed_log_zeta: Some(0.5_f64.ln()),
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), CovarianceError> {
        if !(self.beta_prior_var > 0.0) || !self.beta_prior_var.is_finite() {
            return Err(CovarianceError::InvalidArgument(
                "beta prior variance must be positive".into(),
            ));
        }
        for (i, sd) in self.hyper_prior_sd.iter().enumerate() {
            if !(*sd > 0.0) || !sd.is_finite() {
                return Err(CovarianceError::InvalidArgument(format!(
                    "prior sd of {} must be positive",
                    HYPER_NAMES[i]
                )));
            }
        }
        if self.hyper_prior_mean.iter().any(|m| !m.is_finite()) {
            return Err(CovarianceError::InvalidArgument("prior means must be finite".into()));
        }
        if let Some(z) = self.fixed_log_zeta {
            if !z.is_finite() {
                return Err(CovarianceError::InvalidArgument("fixed log zeta must be finite".into()));
            }
        }
        Ok(())
    }

    /// Indices (into [`HyperParams::as_array`]) of the free hyperparameters.
    pub fn free_indices(&self) -> Vec<usize> {
        if self.fixed_log_zeta.is_some() {
            vec![0, 1, 2]
        } else {
            vec![0, 1, 2, 3]
        }
    }

    pub fn n_free(&self) -> usize {
        self.free_indices().len()
    }

    pub fn to_free(&self, psi: &HyperParams) -> Vec<f64> {
        let a = psi.as_array();
        self.free_indices().into_iter().map(|i| a[i]).collect()
    }

    /// Inverse of [`to_free`](Self::to_free); fills the fixed `log_zeta` when set.
    pub fn from_free(&self, free: &[f64]) -> Result<HyperParams, CovarianceError> {
        let idx = self.free_indices();
        if free.len() != idx.len() {
            return Err(CovarianceError::InvalidArgument(format!(
                "expected {} free hyperparameters, got {}",
                idx.len(),
                free.len()
            )));
        }
        let mut a = [0.0; 4];
        for (v, i) in free.iter().zip(idx) {
            a[i] = *v;
        }
        if let Some(z) = self.fixed_log_zeta {
            a[3] = z;
        }
        HyperParams::from_array(a)
    }

    /// Prior means of the free hyperparameters (the default optimizer start).
    pub fn prior_mean_free(&self) -> Vec<f64> {
        self.free_indices()
            .into_iter()
            .map(|i| self.hyper_prior_mean[i])
            .collect()
    }
}

/// Sum of independent normal log densities over the free log hyperparameters.
pub fn log_hyper_prior(psi: &HyperParams, spec: &PriorSpec) -> f64 {
    let a = psi.as_array();
    spec.free_indices()
        .into_iter()
        .map(|i| {
            let sd = spec.hyper_prior_sd[i];
            let z = (a[i] - spec.hyper_prior_mean[i]) / sd;
            -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
        })
        .sum()
}

/// A covariance function over spatiotemporal points.
///
/// Only the separable Matérn × exponential kernel is provided, but the MRA
/// machinery is written against this trait.
pub trait CovarianceFunction: Sync {
    fn covariance(&self, a: &SpatioTemporalPoint, b: &SpatioTemporalPoint) -> f64;
}

/// `sigma² · Matérn₁.₅(d; rho) · exp(-|Δt| / phi)`, plus the nugget on exact
/// coordinate matches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableMaternExp {
    sigma2: f64,
    rho: f64,
    phi: f64,
}

impl SeparableMaternExp {
    pub fn new(sigma: f64, rho: f64, phi: f64) -> Self {
        Self {
            sigma2: sigma * sigma,
            rho,
            phi,
        }
    }

    pub fn variance(&self) -> f64 {
        self.sigma2
    }
}

impl CovarianceFunction for SeparableMaternExp {
    #[inline]
    fn covariance(&self, a: &SpatioTemporalPoint, b: &SpatioTemporalPoint) -> f64 {
        if a.same_site(b) {
            return self.sigma2 * (1.0 + NUGGET);
        }
        let d = haversine_km(a, b);
        let gap = temporal_gap(a, b);
        self.sigma2 * matern15_unchecked(d, self.rho) * (-gap / self.phi).exp()
    }
}

/// Covariance between two points under `psi`.
pub fn cov_st(a: &SpatioTemporalPoint, b: &SpatioTemporalPoint, psi: &HyperParams) -> f64 {
    psi.kernel().covariance(a, b)
}

/// Dense covariance matrix between two point lists.
pub fn cov_matrix(rows: &[SpatioTemporalPoint], cols: &[SpatioTemporalPoint], psi: &HyperParams) -> DMatrix<f64> {
    cov_matrix_with(&psi.kernel(), rows, cols)
}

pub fn cov_matrix_with<K: CovarianceFunction + ?Sized>(
    kernel: &K,
    rows: &[SpatioTemporalPoint],
    cols: &[SpatioTemporalPoint],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| kernel.covariance(&rows[i], &cols[j]))
}

/// Symmetric covariance of a point list with itself; only half the kernel
/// evaluations are performed and the result is exactly symmetric.
pub fn cov_matrix_sym<K: CovarianceFunction + ?Sized>(kernel: &K, pts: &[SpatioTemporalPoint]) -> DMatrix<f64> {
    let n = pts.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let c = kernel.covariance(&pts[i], &pts[j]);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}
