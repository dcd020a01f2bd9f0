//! Synthetic datasets on a regular grid of tiles observed on consecutive
//! days, with a rectangular block held out on one day.

use std::f64::consts::PI;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use super::{HarnessError, RunConfig};
use crate::geo::SpatioTemporalPoint;
use crate::oracle::DenseGP;

/// Land-cover classes; the first is the natural reference level.
pub const LAND_COVER: [&str; 3] = ["forest", "crop", "urban"];

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub lon: f64,
    pub lat: f64,
    pub day: u32,
    pub date: NaiveDate,
    pub y: f64,
    pub elevation: f64,
    pub landcover: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub train: Vec<SimRow>,
    pub test: Vec<SimRow>,
}

/// Smooth synthetic terrain in metres over the unit square.
fn elevation(u: f64, v: f64) -> f64 {
    350.0 + 180.0 * (2.0 * PI * u).sin() * (PI * v).cos() + 90.0 * (3.0 * PI * (u + v)).cos()
}

fn landcover(u: f64, v: f64) -> &'static str {
    let f = (3.0 * PI * u).sin() + (2.0 * PI * v).cos();
    if f < -0.6 {
        LAND_COVER[1]
    } else if f > 0.9 {
        LAND_COVER[2]
    } else {
        LAND_COVER[0]
    }
}

fn in_block(cfg: &RunConfig, lon: f64, lat: f64, day: u32) -> bool {
    day == cfg.holdout_day
        && (cfg.holdout_lon[0]..=cfg.holdout_lon[1]).contains(&lon)
        && (cfg.holdout_lat[0]..=cfg.holdout_lat[1]).contains(&lat)
}

/// Design matrix matching the ingestion encoding: intercept, centered
/// elevation, land-cover contrasts against forest, day contrasts against
/// day 0.
fn design(sites: &[(f64, f64, u32, f64, &str)], days: u32) -> DMatrix<f64> {
    let n = sites.len();
    let mean_elev = sites.iter().map(|s| s.3).sum::<f64>() / n as f64;
    let p = 4 + days as usize - 1;
    DMatrix::from_fn(n, p, |i, j| {
        let (_, _, day, elev, cover) = sites[i];
        match j {
            0 => 1.0,
            1 => elev - mean_elev,
            2 => f64::from(cover == LAND_COVER[1]),
            3 => f64::from(cover == LAND_COVER[2]),
            k => f64::from(day as usize == k - 3),
        }
    })
}

pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<Simulated, HarnessError> {
    let g = cfg.sim_grid;
    if g == 0 || cfg.sim_days == 0 {
        return Err(HarnessError::Config("sim_grid and sim_days must be positive".into()));
    }
    let n = g * g * cfg.sim_days as usize;
    if n > cfg.oracle_cap {
        return Err(HarnessError::Config(format!(
            "simulation of {n} points exceeds the dense oracle cap {}",
            cfg.oracle_cap
        )));
    }
    let p = 4 + cfg.sim_days as usize - 1;
    if cfg.truth_beta.len() != p {
        return Err(HarnessError::Config(format!("truth_beta needs {p} values, got {}", cfg.truth_beta.len())));
    }
    let start = NaiveDate::parse_from_str(&cfg.sim_start_date, "%Y-%m-%d")
        .map_err(|e| HarnessError::Config(format!("sim_start_date: {e}")))?;

    let (dlon, dlat) = ((cfg.sim_lon[1] - cfg.sim_lon[0]) / g as f64, (cfg.sim_lat[1] - cfg.sim_lat[0]) / g as f64);
    let mut sites = Vec::with_capacity(n);
    for day in 0..cfg.sim_days {
        for i in 0..g {
            for j in 0..g {
                let (u, v) = ((i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64);
                let lon = cfg.sim_lon[0] + (i as f64 + 0.5) * dlon;
                let lat = cfg.sim_lat[0] + (j as f64 + 0.5) * dlat;
                sites.push((lon, lat, day, elevation(u, v), landcover(u, v)));
            }
        }
    }
    let points = sites
        .iter()
        .map(|&(lon, lat, day, _, _)| SpatioTemporalPoint::new(lon, lat, day))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Config(format!("simulation domain: {e}")))?;
    let gp = DenseGP::with_cap(
        points,
        design(&sites, cfg.sim_days),
        cfg.truth_sigma,
        cfg.truth_rho,
        cfg.truth_phi,
        cfg.truth_zeta,
        cfg.oracle_cap,
    )
    .map_err(|e| HarnessError::Config(format!("simulation truth: {e}")))?;
    let y = gp
        .simulate(&cfg.truth_beta, seed)
        .map_err(|e| HarnessError::Numeric(format!("simulate: {e}")))?;

    let mut out = Simulated {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (&(lon, lat, day, elevation, landcover), y) in sites.iter().zip(y) {
        let row = SimRow {
            lon,
            lat,
            day,
            date: start + chrono::Days::new(u64::from(day)),
            y,
            elevation,
            landcover,
        };
        if in_block(cfg, lon, lat, day) {
            out.test.push(row);
        } else {
            out.train.push(row);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig {
            sim_grid: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn holdout_rows_lie_in_the_block() {
        let c = cfg();
        let sim = simulate(&c, 1).unwrap();
        assert_eq!(sim.train.len() + sim.test.len(), 300);
        assert!(!sim.test.is_empty());
        for r in &sim.test {
            assert!(in_block(&c, r.lon, r.lat, r.day));
            assert!(r.lon >= 73.25 && r.lon <= 73.35 && r.lat >= 18.65 && r.lat <= 18.75 && r.day == 2);
        }
        assert!(sim.train.iter().all(|r| !in_block(&c, r.lon, r.lat, r.day)));
        assert!(LAND_COVER.iter().all(|l| sim.train.iter().any(|r| r.landcover == *l)));
    }

    #[test]
    fn no_noise_no_field_gives_the_trend() {
        let c = RunConfig {
            truth_sigma: 0.0,
            truth_zeta: 0.0,
            ..cfg()
        };
        let sim = simulate(&c, 4).unwrap();
        let all: Vec<&SimRow> = sim.train.iter().chain(&sim.test).collect();
        let mean_elev = all.iter().map(|r| r.elevation).sum::<f64>() / all.len() as f64;
        for r in all {
            let b = &c.truth_beta;
            let mut trend = b[0] + b[1] * (r.elevation - mean_elev);
            trend += match r.landcover {
                "crop" => b[2],
                "urban" => b[3],
                _ => 0.0,
            };
            if r.day > 0 {
                trend += b[3 + r.day as usize];
            }
            assert!((r.y - trend).abs() < 1e-9, "{} vs {trend}", r.y);
        }
    }

    #[test]
    fn seeds_reproduce() {
        assert_eq!(simulate(&cfg(), 9).unwrap(), simulate(&cfg(), 9).unwrap());
        assert_ne!(simulate(&cfg(), 9).unwrap(), simulate(&cfg(), 10).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        let c = RunConfig {
            sim_grid: 30,
            oracle_cap: 2000,
            ..RunConfig::default()
        };
        assert!(matches!(simulate(&c, 1), Err(HarnessError::Config(_))));
    }
}
