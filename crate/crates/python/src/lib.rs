//! Python bindings for the `ismra` crate.
//!
//! Points cross the boundary as `(lon, lat, time)` tuples and covariate
//! matrices as lists of rows.

use std::path::PathBuf;
use std::sync::Arc;

use ismra::covariance::{self, HyperParams as CoreHyper, PriorSpec};
use ismra::harness::{self, Dumps, HarnessError, RunConfig};
use ismra::inference::{self, FitOptions, FitResult, Model as CoreModel};
use ismra::oracle::DenseGP as CoreDenseGP;
use ismra::partition::{PartitionConfig, RegionTree};
use ismra::SpatioTemporalPoint;
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ismra_py, IsmraError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    IsmraError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(m) => PyValueError::new_err(m),
        other => err(other),
    }
}

fn to_points(raw: &[(f64, f64, f64)]) -> PyResult<Vec<SpatioTemporalPoint>> {
    raw.iter()
        .map(|&(lon, lat, t)| SpatioTemporalPoint::with_time(lon, lat, t).map_err(|e| PyValueError::new_err(e.to_string())))
        .collect()
}

fn to_matrix(rows: &[Vec<f64>], n: usize) -> PyResult<DMatrix<f64>> {
    if rows.len() != n {
        return Err(PyValueError::new_err(format!("expected {n} covariate rows, got {}", rows.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("covariate rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

#[pyfunction]
fn matern15(dist_km: f64, rho_km: f64) -> PyResult<f64> {
    covariance::matern15(dist_km, rho_km).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn temporal_corr(gap_days: f64, phi_days: f64) -> PyResult<f64> {
    covariance::temporal_corr(gap_days, phi_days).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn haversine_km(a: (f64, f64, f64), b: (f64, f64, f64)) -> PyResult<f64> {
    let p = to_points(&[a, b])?;
    Ok(ismra::geo::haversine_km(&p[0], &p[1]))
}

/// Covariance hyperparameters on the natural scale.
#[pyclass(frozen, skip_from_py_object, name = "HyperParams")]
#[derive(Clone, Copy)]
struct PyHyperParams {
    inner: CoreHyper,
}

#[pymethods]
impl PyHyperParams {
    #[new]
    fn new(sigma: f64, rho: f64, phi: f64, zeta: f64) -> PyResult<Self> {
        CoreHyper::from_natural(sigma, rho, phi, zeta)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }
    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi()
    }
    #[getter]
    fn zeta(&self) -> f64 {
        self.inner.zeta()
    }

    /// `[log σ, log ρ, log φ, log ζ]`.
    fn log_values(&self) -> [f64; 4] {
        self.inner.as_array()
    }

    fn __repr__(&self) -> String {
        format!(
            "HyperParams(sigma={}, rho={}, phi={}, zeta={})",
            self.inner.sigma(),
            self.inner.rho(),
            self.inner.phi(),
            self.inner.zeta()
        )
    }
}

/// Exact dense Gaussian process for small problems.
#[pyclass(frozen, name = "DenseGP")]
struct PyDenseGP {
    inner: CoreDenseGP,
}

#[pymethods]
impl PyDenseGP {
    #[new]
    fn new(points: Vec<(f64, f64, f64)>, x: Vec<Vec<f64>>, psi: &PyHyperParams) -> PyResult<Self> {
        let pts = to_points(&points)?;
        let x = to_matrix(&x, pts.len())?;
        CoreDenseGP::new(pts, x, &psi.inner).map(|inner| Self { inner }).map_err(err)
    }

    fn simulate(&self, beta: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        self.inner.simulate(&beta, seed).map_err(err)
    }

    #[pyo3(signature = (y, beta_prior_var = 100.0))]
    fn evidence(&self, y: Vec<f64>, beta_prior_var: f64) -> PyResult<f64> {
        let priors = PriorSpec {
            beta_prior_var,
            ..PriorSpec::default()
        };
        self.inner.dense_evidence(&y, &priors).map_err(err)
    }

    /// Conditional `(means, variances)` of the response at `points`.
    #[pyo3(signature = (y, points, x, beta_prior_var = 100.0))]
    fn predict(
        &self,
        y: Vec<f64>,
        points: Vec<(f64, f64, f64)>,
        x: Vec<Vec<f64>>,
        beta_prior_var: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let pts = to_points(&points)?;
        let x = to_matrix(&x, pts.len())?;
        let priors = PriorSpec {
            beta_prior_var,
            ..PriorSpec::default()
        };
        self.inner.dense_predict(&y, &pts, &x, &priors).map_err(err)
    }
}

/// The multi-resolution model over a fixed set of observations. `fit`
/// stores its result so that `predict` can reuse the importance draws.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Arc<CoreModel>,
    names: Vec<String>,
    fitted: Option<FitResult>,
}

fn summaries_to_py<'py>(py: Python<'py>, rows: &[inference::MarginalSummary]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", &r.name)?;
            d.set_item("mean", r.mean)?;
            d.set_item("sd", r.sd)?;
            d.set_item("skewness", r.skewness)?;
            d.set_item("ci_low", r.ci_low)?;
            d.set_item("ci_high", r.ci_high)?;
            d.set_item("method", r.method.as_str())?;
            Ok(d)
        })
        .collect()
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (
        points, x, y, *, pred_points = None, names = None, n_lon_splits = 1, n_lat_splits = 1,
        n_time_splits = 1, m0 = 20, j = 2, thinning_rate = 1.0, knot_seed = 1,
        beta_prior_var = 100.0, fixed_zeta = Some(0.5)
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        points: Vec<(f64, f64, f64)>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        pred_points: Option<Vec<(f64, f64, f64)>>,
        names: Option<Vec<String>>,
        n_lon_splits: usize,
        n_lat_splits: usize,
        n_time_splits: usize,
        m0: usize,
        j: usize,
        thinning_rate: f64,
        knot_seed: u64,
        beta_prior_var: f64,
        fixed_zeta: Option<f64>,
    ) -> PyResult<Self> {
        let pts = to_points(&points)?;
        let x = to_matrix(&x, pts.len())?;
        let pred = to_points(&pred_points.unwrap_or_default())?;
        let cfg = PartitionConfig {
            n_lon_splits,
            n_lat_splits,
            n_time_splits,
            m0,
            j,
            thinning_rate,
            ..PartitionConfig::default()
        };
        let mut tree = RegionTree::build(&pts, &cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
        tree.place_knots(&pts, &pred, &cfg, knot_seed).map_err(err)?;
        let priors = PriorSpec {
            beta_prior_var,
            fixed_log_zeta: fixed_zeta.map(f64::ln),
            ..PriorSpec::default()
        };
        let names = names.unwrap_or_else(|| (0..x.ncols()).map(|i| format!("beta{i}")).collect());
        if names.len() != x.ncols() {
            return Err(PyValueError::new_err("one name per covariate column is required"));
        }
        let inner = CoreModel::new(Arc::new(tree), pts, x, y, priors).map_err(err)?;
        Ok(Self {
            inner: Arc::new(inner),
            names,
            fitted: None,
        })
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.points().len()
    }

    #[getter]
    fn total_knots(&self) -> usize {
        self.inner.tree().total_knots()
    }

    /// Nonzeros in the full conditional precision, once known.
    #[getter]
    fn q_nnz(&self) -> Option<usize> {
        self.inner.q_nnz()
    }

    fn log_posterior(&self, py: Python<'_>, psi: &PyHyperParams) -> f64 {
        let model = Arc::clone(&self.inner);
        let psi = psi.inner;
        py.detach(move || model.log_unnormalized_posterior(&psi))
    }

    /// Mode search, importance sampling and marginal summaries. Returns
    /// `{"hyper": [...], "beta": [...], "ess": float, "log_c": float}`.
    #[pyo3(signature = (n_is = 100, seed = 1, max_iter = 25))]
    fn fit<'py>(&mut self, py: Python<'py>, n_is: usize, seed: u64, max_iter: usize) -> PyResult<Bound<'py, PyDict>> {
        let opts = FitOptions {
            n_is,
            seed,
            max_iter,
            ..FitOptions::default()
        };
        let model = Arc::clone(&self.inner);
        let names = self.names.clone();
        let res = py.detach(move || inference::fit(&model, &opts, &names)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("hyper", summaries_to_py(py, &res.hyper)?)?;
        d.set_item("beta", summaries_to_py(py, &res.beta)?)?;
        d.set_item("ess", res.is.ess)?;
        d.set_item("log_c", res.is.log_c)?;
        d.set_item("mode", res.mode.x.clone())?;
        self.fitted = Some(res);
        Ok(d)
    }

    /// Posterior predictive summaries at `points`; requires `fit` first.
    fn predict<'py>(&self, py: Python<'py>, points: Vec<(f64, f64, f64)>, x: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let fitted = self.fitted.as_ref().ok_or_else(|| IsmraError::new_err("call fit() before predict()"))?;
        let pts = to_points(&points)?;
        let x = to_matrix(&x, pts.len())?;
        let model = Arc::clone(&self.inner);
        let out = py.detach(|| inference::predict(&model, &fitted.is, &pts, &x)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("mean", out.mean)?;
        d.set_item("sd", out.sd)?;
        d.set_item("ci_low", out.ci_low)?;
        d.set_item("ci_high", out.ci_high)?;
        d.set_item("method", out.method.iter().map(|m| m.as_str()).collect::<Vec<_>>())?;
        Ok(d)
    }
}

fn load_config(config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut text = match config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?,
        None => String::new(),
    };
    if let Some(extra) = overrides {
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        for (k, v) in extra.iter() {
            let key: String = k.extract()?;
            let value: toml::Value = py_to_toml(&v)?;
            table.insert(key, value);
        }
        text = toml::to_string(&table).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    RunConfig::from_toml_str(&text).map_err(harness_err)
}

fn py_to_toml(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(toml::Value::Boolean(b));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(toml::Value::Integer(i));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(toml::Value::Float(f));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(toml::Value::String(s));
    }
    if let Ok(items) = v.extract::<Vec<Bound<'_, PyAny>>>() {
        return items.iter().map(py_to_toml).collect::<PyResult<Vec<_>>>().map(toml::Value::Array);
    }
    Err(PyValueError::new_err(format!("unsupported configuration value {v}")))
}

/// Run the `simulate` command; keyword arguments override configuration keys.
#[pyfunction]
#[pyo3(signature = (config = None, **overrides))]
fn run_simulate(py: Python<'_>, config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<PathBuf> {
    let cfg = load_config(config, overrides)?;
    py.detach(|| harness::run_simulate(&cfg)).map_err(harness_err)
}

/// Run the `fit` command; returns the output directory.
#[pyfunction]
#[pyo3(signature = (config = None, **overrides))]
fn run_fit(py: Python<'_>, config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<PathBuf> {
    let cfg = load_config(config, overrides)?;
    py.detach(|| harness::run_fit(&cfg, Dumps::default())).map_err(harness_err)
}

#[pyfunction]
#[pyo3(signature = (config = None, **overrides))]
fn run_oracle_predict(py: Python<'_>, config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<PathBuf> {
    let cfg = load_config(config, overrides)?;
    py.detach(|| harness::run_oracle_predict(&cfg)).map_err(harness_err)
}

/// Score a predictions file; returns `{"n", "mspe", "medspe", "coverage"}`.
#[pyfunction]
#[pyo3(signature = (predictions, truth, response_column = "y"))]
fn metrics<'py>(py: Python<'py>, predictions: PathBuf, truth: PathBuf, response_column: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig {
        truth: Some(truth),
        response_column: response_column.to_string(),
        ..RunConfig::default()
    };
    let m = harness::run_metrics(&cfg, &predictions).map_err(harness_err)?;
    let d = PyDict::new(py);
    d.set_item("n", m.n)?;
    d.set_item("mspe", m.mspe)?;
    d.set_item("medspe", m.medspe)?;
    d.set_item("coverage", m.coverage)?;
    Ok(d)
}

#[pymodule]
fn ismra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IsmraError", m.py().get_type::<IsmraError>())?;
    m.add_class::<PyHyperParams>()?;
    m.add_class::<PyDenseGP>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(matern15, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_corr, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_fit, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracle_predict, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    Ok(())
}
