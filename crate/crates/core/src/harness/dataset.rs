//! CSV ingestion into points, responses and a design matrix.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use super::{HarnessError, RunConfig};
use crate::geo::SpatioTemporalPoint;

/// Which columns to read and how to encode them.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub lon: String,
    pub lat: String,
    pub time: String,
    /// `"day"` for integer day indices, otherwise a chrono date format.
    pub time_format: String,
    pub response: String,
    pub continuous: Vec<String>,
    /// (column, reference level)
    pub categorical: Vec<(String, String)>,
    pub intercept: bool,
}

impl Schema {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, HarnessError> {
        Ok(Self {
            lon: cfg.lon_column.clone(),
            lat: cfg.lat_column.clone(),
            time: cfg.time_column.clone(),
            time_format: cfg.time_format.clone(),
            response: cfg.response_column.clone(),
            continuous: cfg.continuous.clone(),
            categorical: cfg.categorical_specs()?,
            intercept: cfg.intercept,
        })
    }

    fn uses_dates(&self) -> bool {
        self.time_format != "day"
    }
}

/// Everything learned from the training file that prediction files must
/// reuse: the date origin, centering constants and categorical levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub origin: Option<NaiveDate>,
    /// Mean of each continuous covariate in the training data.
    pub centers: Vec<f64>,
    /// Non-reference levels of each categorical covariate, sorted.
    pub levels: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub points: Vec<SpatioTemporalPoint>,
    /// Responses, when the file has the response column.
    pub y: Option<Vec<f64>>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub encoding: Encoding,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn response(&self) -> Result<&[f64], HarnessError> {
        self.y
            .as_deref()
            .ok_or_else(|| HarnessError::Data("the file has no response column".into()))
    }
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}: {msg}", path.display()))
}

struct RawRow {
    line: u64,
    lon: f64,
    lat: f64,
    time: String,
    y: Option<f64>,
    cont: Vec<f64>,
    cat: Vec<String>,
}

fn parse_f64(path: &Path, line: u64, col: &str, s: &str) -> Result<f64, HarnessError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| data_err(path, format!("row {line}, column {col:?}: cannot parse {s:?} as a number")))?;
    if !v.is_finite() {
        return Err(data_err(path, format!("row {line}, column {col:?}: value {s:?} is not finite")));
    }
    Ok(v)
}

/// Read a CSV file. With `encoding = None` the file is treated as training
/// data: the response is required and the encoding is learned from it.
/// Otherwise the given encoding is applied and the response is optional.
pub fn ingest_csv(path: &Path, schema: &Schema, encoding: Option<&Encoding>) -> Result<Dataset, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| data_err(path, format!("cannot open: {e}")))?;
    ingest_reader(file, path, schema, encoding)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: &Schema,
    encoding: Option<&Encoding>,
) -> Result<Dataset, HarnessError> {
    let training = encoding.is_none();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| data_err(path, format!("cannot read header: {e}")))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| find(name).ok_or_else(|| data_err(path, format!("missing column {name:?}")));

    let lon_i = require(&schema.lon)?;
    let lat_i = require(&schema.lat)?;
    let time_i = require(&schema.time)?;
    let y_i = if training { Some(require(&schema.response)?) } else { find(&schema.response) };
    let cont_i = schema.continuous.iter().map(|c| require(c)).collect::<Result<Vec<_>, _>>()?;
    let cat_i = schema.categorical.iter().map(|(c, _)| require(c)).collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // Header is line 1, so data row k sits on line k + 2 unless the
        // reader reports otherwise.
        let fallback = k as u64 + 2;
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(fallback, |p| p.line());
            data_err(path, format!("row {line}: {e}"))
        })?;
        let line = rec.position().map_or(fallback, |p| p.line());
        if rec.len() != headers.len() {
            return Err(data_err(path, format!("row {line}: expected {} fields, found {}", headers.len(), rec.len())));
        }
        let y = match y_i {
            Some(i) if !rec[i].is_empty() => Some(parse_f64(path, line, &schema.response, &rec[i])?),
            Some(_) if training => return Err(data_err(path, format!("row {line}: missing response"))),
            _ => None,
        };
        rows.push(RawRow {
            line,
            lon: parse_f64(path, line, &schema.lon, &rec[lon_i])?,
            lat: parse_f64(path, line, &schema.lat, &rec[lat_i])?,
            time: rec[time_i].to_string(),
            y,
            cont: cont_i
                .iter()
                .zip(&schema.continuous)
                .map(|(&i, c)| parse_f64(path, line, c, &rec[i]))
                .collect::<Result<_, _>>()?,
            cat: cat_i.iter().map(|&i| rec[i].to_string()).collect(),
        });
    }
    if rows.is_empty() {
        return Err(data_err(path, "no data rows"));
    }

    // Time coordinates.
    let dates: Option<Vec<NaiveDate>> = if schema.uses_dates() {
        Some(
            rows.iter()
                .map(|r| {
                    NaiveDate::parse_from_str(&r.time, &schema.time_format).map_err(|e| {
                        data_err(
                            path,
                            format!("row {}, column {:?}: cannot parse {:?} as a date: {e}", r.line, schema.time, r.time),
                        )
                    })
                })
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };

    let enc = match encoding {
        Some(e) => e.clone(),
        None => learn_encoding(path, schema, &rows, dates.as_deref())?,
    };

    let mut points = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let day = match (&dates, enc.origin) {
            (Some(d), Some(origin)) => {
                let diff = (d[i] - origin).num_days();
                u32::try_from(diff)
                    .map_err(|_| data_err(path, format!("row {}: date {} precedes the training start {origin}", r.line, d[i])))?
            }
            _ => r
                .time
                .trim()
                .parse::<u32>()
                .map_err(|_| data_err(path, format!("row {}, column {:?}: {:?} is not a day index", r.line, schema.time, r.time)))?,
        };
        let pt = SpatioTemporalPoint::new(r.lon, r.lat, day).map_err(|e| data_err(path, format!("row {}: {e}", r.line)))?;
        points.push(pt);
    }

    let mut names = Vec::new();
    if schema.intercept {
        names.push("intercept".to_string());
    }
    names.extend(schema.continuous.iter().cloned());
    for ((col, _), levels) in schema.categorical.iter().zip(&enc.levels) {
        names.extend(levels.iter().map(|l| format!("{col}[{l}]")));
    }
    let p = names.len();
    let mut x = DMatrix::zeros(rows.len(), p);
    for (i, r) in rows.iter().enumerate() {
        let mut c = 0;
        if schema.intercept {
            x[(i, 0)] = 1.0;
            c = 1;
        }
        for (v, center) in r.cont.iter().zip(&enc.centers) {
            x[(i, c)] = v - center;
            c += 1;
        }
        for (k, ((col, reference), levels)) in schema.categorical.iter().zip(&enc.levels).enumerate() {
            let value = &r.cat[k];
            match levels.iter().position(|l| l == value) {
                Some(j) => x[(i, c + j)] = 1.0,
                None if value == reference => {}
                None => {
                    return Err(data_err(path, format!("row {}, column {col:?}: unknown level {value:?}", r.line)));
                }
            }
            c += levels.len();
        }
    }

    let y = if rows.iter().all(|r| r.y.is_some()) {
        Some(rows.iter().map(|r| r.y.expect("checked")).collect())
    } else {
        None
    };
    Ok(Dataset {
        points,
        y,
        x,
        names,
        encoding: enc,
    })
}

/// One numeric column of a CSV file, e.g. the responses of a truth file.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, format!("cannot open: {e}")))?;
    let headers = rdr.headers().map_err(|e| data_err(path, format!("cannot read header: {e}")))?;
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| data_err(path, format!("missing column {column:?}")))?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| data_err(path, format!("row {line}: {e}")))?;
        let field = rec.get(idx).ok_or_else(|| data_err(path, format!("row {line}: missing field {column:?}")))?;
        out.push(parse_f64(path, line, column, field)?);
    }
    Ok(out)
}

fn learn_encoding(path: &Path, schema: &Schema, rows: &[RawRow], dates: Option<&[NaiveDate]>) -> Result<Encoding, HarnessError> {
    let n = rows.len() as f64;
    let centers = (0..schema.continuous.len())
        .map(|k| rows.iter().map(|r| r.cont[k]).sum::<f64>() / n)
        .collect();
    let mut levels = Vec::with_capacity(schema.categorical.len());
    for (k, (col, reference)) in schema.categorical.iter().enumerate() {
        let seen: BTreeSet<&str> = rows.iter().map(|r| r.cat[k].as_str()).collect();
        if !seen.contains(reference.as_str()) {
            return Err(data_err(path, format!("column {col:?}: reference level {reference:?} does not occur")));
        }
        levels.push(seen.into_iter().filter(|l| l != reference).map(String::from).collect());
    }
    Ok(Encoding {
        origin: dates.and_then(|d| d.iter().min().copied()),
        centers,
        levels,
    })
}
