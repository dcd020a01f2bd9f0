//! Run configuration: one flat TOML table, every key optional except the seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::covariance::PriorSpec;
use crate::inference::{FitOptions, Retention};
use crate::partition::{KnotMode, KnotPlacement, PartitionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Must be given here or on the command line.
    pub seed: Option<u64>,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,

    pub train: Option<PathBuf>,
    pub predict_at: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    // Input schema.
    pub lon_column: String,
    pub lat_column: String,
    /// Column holding either integer day indices or calendar dates.
    pub time_column: String,
    /// `"day"` for integer indices, otherwise a chrono date format string.
    pub time_format: String,
    pub response_column: String,
    pub continuous: Vec<String>,
    /// Categorical covariates as `"column:reference_level"`.
    pub categorical: Vec<String>,
    pub intercept: bool,

    // Partition and knots.
    pub n_lon_splits: usize,
    pub n_lat_splits: usize,
    pub n_time_splits: usize,
    pub m0: usize,
    pub j: usize,
    /// When set, every coarse region gets this many knots instead of the
    /// level total `m0 * j^r`.
    pub knots_per_region: Option<usize>,
    pub thinning_rate: f64,
    /// `"prism"` or `"random"`.
    pub knot_placement: String,
    pub prism_span: f64,
    pub jitter: f64,

    // Priors on the log scale, ordered (sigma, rho, phi, zeta).
    pub beta_prior_var: f64,
    pub hyper_prior_mean: [f64; 4],
    pub hyper_prior_sd: [f64; 4],
    /// Natural-scale measurement-error SD, held fixed unless `sample_zeta`.
    pub fixed_zeta: f64,
    pub sample_zeta: bool,

    // Optimizer, proposal and importance sampling.
    pub max_iter: usize,
    /// Start of the mode search in free log coordinates.
    pub start: Option<Vec<f64>>,
    pub grad_step: f64,
    pub hess_step: f64,
    pub n_is: usize,
    /// `"keep"` stores per-draw factors; `"recompute"` rebuilds them when
    /// predicting.
    pub retention: String,

    // Simulation and dense baseline.
    pub sim_grid: usize,
    pub sim_days: u32,
    pub sim_lon: [f64; 2],
    pub sim_lat: [f64; 2],
    pub holdout_lon: [f64; 2],
    pub holdout_lat: [f64; 2],
    /// Day index whose block is held out.
    pub holdout_day: u32,
    pub sim_start_date: String,
    pub truth_sigma: f64,
    pub truth_rho: f64,
    pub truth_phi: f64,
    pub truth_zeta: f64,
    /// Intercept, elevation, two land-cover contrasts, then one effect per
    /// day after the first.
    pub truth_beta: Vec<f64>,
    pub oracle_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: None,
            train: None,
            predict_at: None,
            truth: None,
            out_dir: None,
            lon_column: "lon".into(),
            lat_column: "lat".into(),
            time_column: "date".into(),
            time_format: "%Y-%m-%d".into(),
            response_column: "y".into(),
            continuous: Vec::new(),
            categorical: Vec::new(),
            intercept: true,
            n_lon_splits: 1,
            n_lat_splits: 1,
            n_time_splits: 1,
            m0: 20,
            j: 2,
            knots_per_region: None,
            thinning_rate: 1.0,
            knot_placement: "prism".into(),
            prism_span: 0.8,
            jitter: 0.01,
            beta_prior_var: 100.0,
            hyper_prior_mean: [0.0; 4],
            hyper_prior_sd: [2.0; 4],
            fixed_zeta: 0.5,
            sample_zeta: false,
            max_iter: 25,
            start: None,
            grad_step: 1e-4,
            hess_step: 1e-3,
            n_is: 100,
            retention: "keep".into(),
            sim_grid: 22,
            sim_days: 3,
            sim_lon: [73.2, 73.4],
            sim_lat: [18.6, 18.8],
            holdout_lon: [73.25, 73.35],
            holdout_lat: [18.65, 18.75],
            holdout_day: 2,
            sim_start_date: "2012-05-26".into(),
            truth_sigma: 4.140,
            truth_rho: 5.660,
            truth_phi: 3.601,
            truth_zeta: 0.5,
            truth_beta: vec![30.0, -0.01, 1.5, -1.0, 0.8, 1.6],
            oracle_cap: crate::oracle::DEFAULT_CAP,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| cfg_err(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The configuration echoed as TOML (used in the run manifest).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn seed(&self) -> Result<u64, HarnessError> {
        self.seed.ok_or_else(|| cfg_err("a seed is required (config key `seed` or --seed)"))
    }

    pub fn partition(&self) -> Result<PartitionConfig, HarnessError> {
        let placement = match self.knot_placement.as_str() {
            "prism" => KnotPlacement::Prism,
            "random" => KnotPlacement::UniformRandom,
            other => return Err(cfg_err(format!("knot_placement must be \"prism\" or \"random\", got {other:?}"))),
        };
        let cfg = PartitionConfig {
            n_lon_splits: self.n_lon_splits,
            n_lat_splits: self.n_lat_splits,
            n_time_splits: self.n_time_splits,
            m0: self.m0,
            j: self.j,
            thinning_rate: self.thinning_rate,
            knot_mode: match self.knots_per_region {
                Some(k) => KnotMode::PerRegion(k),
                None => KnotMode::LevelTotal,
            },
            placement,
            prism_span: self.prism_span,
            jitter: self.jitter,
        };
        cfg.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn priors(&self) -> Result<PriorSpec, HarnessError> {
        let fixed_log_zeta = match (self.sample_zeta, self.fixed_zeta) {
            (true, _) => None,
            (false, z) if z > 0.0 && z.is_finite() => Some(z.ln()),
            (false, z) => return Err(cfg_err(format!("fixed_zeta must be positive, got {z}"))),
        };
        let spec = PriorSpec {
            beta_prior_var: self.beta_prior_var,
            hyper_prior_mean: self.hyper_prior_mean,
            hyper_prior_sd: self.hyper_prior_sd,
            fixed_log_zeta,
        };
        spec.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(spec)
    }

    pub fn fit_options(&self) -> Result<FitOptions, HarnessError> {
        let retention = match self.retention.as_str() {
            "keep" => Retention::Keep,
            "recompute" => Retention::Recompute,
            other => return Err(cfg_err(format!("retention must be \"keep\" or \"recompute\", got {other:?}"))),
        };
        if self.n_is < 2 {
            return Err(cfg_err(format!("n_is must be at least 2, got {}", self.n_is)));
        }
        for (name, h) in [("grad_step", self.grad_step), ("hess_step", self.hess_step)] {
            if !(h > 0.0 && h.is_finite()) {
                return Err(cfg_err(format!("{name} must be positive, got {h}")));
            }
        }
        let n_free = self.priors()?.n_free();
        if let Some(s) = &self.start {
            if s.len() != n_free {
                return Err(cfg_err(format!("start needs {n_free} values, got {}", s.len())));
            }
        }
        Ok(FitOptions {
            max_iter: self.max_iter,
            start: self.start.clone(),
            n_is: self.n_is,
            seed: self.seed()?,
            grad_step: self.grad_step,
            hess_step: self.hess_step,
            retention,
        })
    }

    /// Categorical covariates split into (column, reference level).
    pub fn categorical_specs(&self) -> Result<Vec<(String, String)>, HarnessError> {
        self.categorical
            .iter()
            .map(|s| match s.split_once(':') {
                Some((c, r)) if !c.is_empty() && !r.is_empty() => Ok((c.to_string(), r.to_string())),
                _ => Err(cfg_err(format!("categorical entry {s:?} must look like \"column:reference\""))),
            })
            .collect()
    }

    pub fn thread_count(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.seed().is_err());
    }

    #[test]
    fn flat_keys_parse() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seed = 42
            n_lon_splits = 2
            thinning_rate = 0.5
            categorical = ["landcover:forest"]
            fixed_zeta = 0.3
            start = [1.0, 1.5, 1.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed().unwrap(), 42);
        assert_eq!(cfg.partition().unwrap().resolutions(), 4);
        assert_eq!(cfg.categorical_specs().unwrap(), vec![("landcover".to_string(), "forest".to_string())]);
        assert!((cfg.priors().unwrap().fixed_log_zeta.unwrap() - 0.3f64.ln()).abs() < 1e-15);
        assert_eq!(cfg.fit_options().unwrap().start, Some(vec![1.0, 1.5, 1.0]));
        let sampled = RunConfig::from_toml_str("sample_zeta = true").unwrap();
        assert_eq!(sampled.priors().unwrap().fixed_log_zeta, None);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "unknown_key = 1",
            "thinning_rate = 0.0",
            "knot_placement = \"grid\"",
            "seed = 1\nn_is = 1",
            "seed = 1\nstart = [1.0]",
            "categorical = [\"nocolon\"]",
        ] {
            let res = RunConfig::from_toml_str(text).and_then(|c| {
                c.partition()?;
                c.fit_options()?;
                c.categorical_specs()
            });
            assert!(matches!(res, Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.seed = Some(3);
        cfg.continuous = vec!["elevation".into()];
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
