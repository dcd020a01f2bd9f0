//! Output tables. Numbers are written with Rust's shortest round-trip
//! formatting so equal results always produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::simulate::SimRow;
use super::{HarnessError, Metrics};
use crate::geo::SpatioTemporalPoint;
use crate::inference::{MarginalSummary, Predictions};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const HYPER_FILE: &str = "hyperparameters.csv";
pub const FIXED_FILE: &str = "fixed_effects.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TREE_FILE: &str = "tree.csv";
pub const Q_PATTERN_FILE: &str = "q_pattern.csv";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| HarnessError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn predictions_csv(points: &[SpatioTemporalPoint], pred: &Predictions) -> String {
    let mut s = String::from("lon,lat,time,mean,sd,ci_low,ci_high,method\n");
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.lon(),
            p.lat(),
            p.time(),
            pred.mean[i],
            pred.sd[i],
            pred.ci_low[i],
            pred.ci_high[i],
            pred.method[i].as_str()
        );
    }
    s
}

pub fn summaries_csv(rows: &[MarginalSummary]) -> String {
    let mut s = String::from("name,mean,sd,skewness,ci_low,ci_high,method\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.name,
            r.mean,
            r.sd,
            r.skewness,
            r.ci_low,
            r.ci_high,
            r.method.as_str()
        );
    }
    s
}

pub fn metrics_csv(m: &Metrics) -> String {
    format!("n,mspe,medspe,coverage\n{},{},{},{}\n", m.n, m.mspe, m.medspe, m.coverage)
}

pub fn sim_csv(rows: &[SimRow]) -> String {
    let mut s = String::from("lon,lat,date,day,y,elevation,landcover\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.lon,
            r.lat,
            r.date.format("%Y-%m-%d"),
            r.day,
            r.y,
            r.elevation,
            r.landcover
        );
    }
    s
}

/// Columns needed to score a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

pub fn read_predictions(path: &Path) -> Result<PredictionTable, HarnessError> {
    let err = |msg: String| HarnessError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(format!("cannot open: {e}")))?;
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| err(format!("missing column {name:?}")));
    let (mi, li, hi) = (col("mean")?, col("ci_low")?, col("ci_high")?);
    let mut t = PredictionTable {
        mean: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
    };
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(format!("row {line}: {e}")))?;
        let get = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| err(format!("row {line}: bad number in column {:?}", &headers[i])))
        };
        t.mean.push(get(mi)?);
        t.ci_low.push(get(li)?);
        t.ci_high.push(get(hi)?);
    }
    Ok(t)
}
