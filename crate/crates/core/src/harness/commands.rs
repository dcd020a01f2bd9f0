use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use super::dataset::{ingest_csv, read_column, Dataset, Schema};
use super::metrics::{compute_metrics, Metrics};
use super::report::{self, write_file};
use super::simulate::simulate;
use super::{HarnessError, RunConfig};
use crate::geo::SpatioTemporalPoint;
use crate::inference::{fit, predict, CiMethod, FitResult, Model, Predictions};
use crate::oracle::DenseGP;
use crate::partition::RegionTree;

/// Independent stream for one pipeline stage, derived from the master seed
/// with the SplitMix64 finalizer.
pub fn stage_seed(master: u64, stage: u64) -> u64 {
    let mut z = master.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const KNOT_STAGE: u64 = 1;
const IS_STAGE: u64 = 2;
const SIM_STAGE: u64 = 3;

fn timed<T>(stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    log::info!("{stage}: {:.3} s", start.elapsed().as_secs_f64());
    out
}

/// Run `f` on a pool with the configured number of threads.
fn with_threads<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count())
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start {} threads: {e}", cfg.thread_count())))?;
    Ok(pool.install(f))
}

fn require_path<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, HarnessError> {
    p.as_deref().ok_or_else(|| HarnessError::Config(format!("{what} is required")))
}

/// Region tree with knots, and the model over the training data.
pub fn build_model(cfg: &RunConfig, train: &Dataset, pred_points: &[SpatioTemporalPoint]) -> Result<Model, HarnessError> {
    let partition = cfg.partition()?;
    let seed = stage_seed(cfg.seed()?, KNOT_STAGE);
    let mut tree = RegionTree::build(&train.points, &partition).map_err(|e| HarnessError::Data(format!("partition: {e}")))?;
    tree.place_knots(&train.points, pred_points, &partition, seed)
        .map_err(|e| HarnessError::Data(format!("knot placement: {e}")))?;
    Model::new(Arc::new(tree), train.points.clone(), train.x.clone(), train.response()?.to_vec(), cfg.priors()?)
        .map_err(|e| HarnessError::Data(format!("model: {e}")))
}

#[derive(Debug)]
pub struct FitOutcome {
    pub model: Model,
    pub fit: FitResult,
    pub predictions: Option<Predictions>,
}

/// Mode search, proposal, importance sampling and, when prediction points
/// are given, posterior predictive summaries.
pub fn fit_predict(cfg: &RunConfig, train: &Dataset, pred: Option<&Dataset>) -> Result<FitOutcome, HarnessError> {
    let pred_points = pred.map_or(&[][..], |d| &d.points[..]);
    let model = timed("partition and knots", || build_model(cfg, train, pred_points))?;
    let mut opts = cfg.fit_options()?;
    opts.seed = stage_seed(opts.seed, IS_STAGE);
    let result = timed("fit", || fit(&model, &opts, &train.names)).map_err(|e| HarnessError::Numeric(format!("fit: {e}")))?;
    let predictions = match pred {
        Some(d) => Some(
            timed("predict", || predict(&model, &result.is, &d.points, &d.x))
                .map_err(|e| HarnessError::Numeric(format!("predict: {e}")))?,
        ),
        None => None,
    };
    Ok(FitOutcome {
        model,
        fit: result,
        predictions,
    })
}

/// Exact kriging at the configured true hyperparameters, fixed effects
/// integrated over their prior.
pub fn oracle_predict(cfg: &RunConfig, train: &Dataset, pred: &Dataset) -> Result<Predictions, HarnessError> {
    let gp = DenseGP::with_cap(
        train.points.clone(),
        train.x.clone(),
        cfg.truth_sigma,
        cfg.truth_rho,
        cfg.truth_phi,
        cfg.truth_zeta,
        cfg.oracle_cap,
    )
    .map_err(|e| HarnessError::Config(format!("oracle: {e}")))?;
    let (mean, var) = gp
        .dense_predict(train.response()?, &pred.points, &pred.x, &cfg.priors()?)
        .map_err(|e| HarnessError::Numeric(format!("oracle: {e}")))?;
    let z = crate::inference::Z975;
    let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(Predictions {
        ci_low: mean.iter().zip(&sd).map(|(m, s)| m - z * s).collect(),
        ci_high: mean.iter().zip(&sd).map(|(m, s)| m + z * s).collect(),
        method: vec![CiMethod::Normal; mean.len()],
        mean,
        sd,
    })
}

fn load_inputs(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>), HarnessError> {
    let schema = Schema::from_config(cfg)?;
    let train = ingest_csv(require_path(&cfg.train, "--train")?, &schema, None)?;
    let pred = match &cfg.predict_at {
        Some(p) => Some(ingest_csv(p, &schema, Some(&train.encoding))?),
        None => None,
    };
    Ok((train, pred))
}

fn truth_metrics(cfg: &RunConfig, pred: &Predictions) -> Result<Option<Metrics>, HarnessError> {
    let Some(path) = &cfg.truth else {
        return Ok(None);
    };
    let truth = read_column(path, &cfg.response_column)?;
    Ok(Some(compute_metrics(&pred.mean, &pred.ci_low, &pred.ci_high, &truth)?))
}

/// Diagnostic dumps requested alongside a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Dumps {
    pub tree: bool,
    pub q_pattern: bool,
}

/// `fit`: the full pipeline from CSV inputs to report files.
pub fn run_fit(cfg: &RunConfig, dumps: Dumps) -> Result<PathBuf, HarnessError> {
    let out = require_path(&cfg.out_dir, "--out-dir")?.to_path_buf();
    let seed = cfg.seed()?;
    let (train, pred) = timed("read inputs", || load_inputs(cfg))?;
    let outcome = with_threads(cfg, || fit_predict(cfg, &train, pred.as_ref()))??;

    write_file(&out, report::HYPER_FILE, &report::summaries_csv(&outcome.fit.hyper))?;
    write_file(&out, report::FIXED_FILE, &report::summaries_csv(&outcome.fit.beta))?;
    let mut metrics = None;
    if let (Some(p), Some(d)) = (&outcome.predictions, &pred) {
        write_file(&out, report::PREDICTIONS_FILE, &report::predictions_csv(&d.points, p))?;
        metrics = truth_metrics(cfg, p)?;
        if let Some(m) = &metrics {
            write_file(&out, report::METRICS_FILE, &report::metrics_csv(m))?;
        }
    }
    if dumps.tree {
        write_file(&out, report::TREE_FILE, &outcome.model.tree().summary_csv())?;
    }
    if dumps.q_pattern {
        if let Some(s) = outcome.model.q_structure() {
            write_file(&out, report::Q_PATTERN_FILE, &s.pattern().pattern_coo())?;
        }
    }

    let fit = &outcome.fit;
    let manifest = json!({
        "command": "fit",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "knot_seed": stage_seed(seed, KNOT_STAGE),
        "is_seed": stage_seed(seed, IS_STAGE),
        "threads": cfg.thread_count(),
        "n_train": train.len(),
        "n_predict": pred.as_ref().map_or(0, Dataset::len),
        "covariates": train.names,
        "resolutions": outcome.model.tree().depth(),
        "n_knots": outcome.model.tree().total_knots(),
        "q_order": outcome.model.q_structure().map(|s| s.order()),
        "q_nnz": outcome.model.q_nnz(),
        "factor_nnz": outcome.model.symbolic().map(|s| s.factor_nnz()),
        "mode": fit.mode.x,
        "mode_log_posterior": fit.mode.value,
        "optimizer_iterations": fit.mode.iterations,
        "proposal_regularized": fit.proposal.regularized,
        "n_is": fit.is.samples.len(),
        "ess": fit.is.ess,
        "log_c": fit.is.log_c,
        "weights_degenerate": fit.is.degenerate,
        "metrics": metrics,
        "config": cfg,
    });
    write_manifest(&out, &manifest)?;
    Ok(out)
}

fn write_manifest(out: &Path, manifest: &serde_json::Value) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest is serializable");
    write_file(out, report::MANIFEST_FILE, &(text + "\n"))?;
    Ok(())
}

/// `simulate`: training and held-out block files.
pub fn run_simulate(cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    let out = require_path(&cfg.out_dir, "--out-dir")?.to_path_buf();
    let seed = cfg.seed()?;
    let sim = with_threads(cfg, || timed("simulate", || simulate(cfg, stage_seed(seed, SIM_STAGE))))??;
    write_file(&out, report::TRAIN_FILE, &report::sim_csv(&sim.train))?;
    write_file(&out, report::TEST_FILE, &report::sim_csv(&sim.test))?;
    let manifest = json!({
        "command": "simulate",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "sim_seed": stage_seed(seed, SIM_STAGE),
        "n_train": sim.train.len(),
        "n_test": sim.test.len(),
        "config": cfg,
    });
    write_manifest(&out, &manifest)?;
    Ok(out)
}

/// `oracle-predict`: dense kriging baseline at the true hyperparameters.
pub fn run_oracle_predict(cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    let out = require_path(&cfg.out_dir, "--out-dir")?.to_path_buf();
    let (train, pred) = timed("read inputs", || load_inputs(cfg))?;
    let pred = pred.ok_or_else(|| HarnessError::Config("--predict-at is required".into()))?;
    let p = with_threads(cfg, || timed("dense prediction", || oracle_predict(cfg, &train, &pred)))??;
    write_file(&out, report::PREDICTIONS_FILE, &report::predictions_csv(&pred.points, &p))?;
    let metrics = truth_metrics(cfg, &p)?;
    if let Some(m) = &metrics {
        write_file(&out, report::METRICS_FILE, &report::metrics_csv(m))?;
    }
    let manifest = json!({
        "command": "oracle-predict",
        "version": env!("CARGO_PKG_VERSION"),
        "n_train": train.len(),
        "n_predict": pred.len(),
        "metrics": metrics,
        "config": cfg,
    });
    write_manifest(&out, &manifest)?;
    Ok(out)
}

/// `metrics`: score an existing prediction file against the truth file.
pub fn run_metrics(cfg: &RunConfig, predictions: &Path) -> Result<Metrics, HarnessError> {
    let table = report::read_predictions(predictions)?;
    let truth = read_column(require_path(&cfg.truth, "--truth")?, &cfg.response_column)?;
    let m = compute_metrics(&table.mean, &table.ci_low, &table.ci_high, &truth)?;
    if let Some(out) = &cfg.out_dir {
        write_file(out, report::METRICS_FILE, &report::metrics_csv(&m))?;
    }
    Ok(m)
}
