//! Spatiotemporal coordinates and distances.

use std::fmt;

use thiserror::Error;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("time {0} must be finite and non-negative")]
    Time(f64),
}

/// A location in space (degrees) and time (days).
///
/// Observations and prediction sites carry integer day indices. Knots placed
/// on the edges of a region prism may sit at fractional times, which is why
/// the time coordinate is stored as `f64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatioTemporalPoint {
    lon: f64,
    lat: f64,
    time: f64,
}

impl SpatioTemporalPoint {
    /// Observation or prediction site with an integer day index.
    pub fn new(lon: f64, lat: f64, day: u32) -> Result<Self, GeoError> {
        Self::with_time(lon, lat, f64::from(day))
    }

    /// Point with a continuous time coordinate (used for knots).
    pub fn with_time(lon: f64, lat: f64, time: f64) -> Result<Self, GeoError> {
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !time.is_finite() || time < 0.0 {
            return Err(GeoError::Time(time));
        }
        Ok(Self { lon, lat, time })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Coordinate along `dim` (0 = lon, 1 = lat, 2 = time).
    pub fn coord(&self, dim: usize) -> f64 {
        match dim {
            0 => self.lon,
            1 => self.lat,
            2 => self.time,
            _ => panic!("dimension {dim} out of range"),
        }
    }

    /// Exact coordinate equality in all three dimensions.
    pub fn same_site(&self, other: &Self) -> bool {
        self.lon == other.lon && self.lat == other.lat && self.time == other.time
    }

    /// Bitwise key, suitable for deduplicating identical sites.
    pub fn key(&self) -> [u64; 3] {
        [self.lon.to_bits(), self.lat.to_bits(), self.time.to_bits()]
    }

    pub(crate) fn from_coords_unchecked(c: [f64; 3]) -> Self {
        Self {
            lon: c[0],
            lat: c[1],
            time: c[2],
        }
    }
}

impl fmt::Display for SpatioTemporalPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, t={})", self.lon, self.lat, self.time)
    }
}

/// Great-circle distance between the spatial parts of two points, in km.
pub fn haversine_km(a: &SpatioTemporalPoint, b: &SpatioTemporalPoint) -> f64 {
    if a.lon == b.lon && a.lat == b.lat {
        return 0.0;
    }
    // Order the operands so that the result is bitwise symmetric.
    let (a, b) = if (a.lon, a.lat) <= (b.lon, b.lat) {
        (a, b)
    } else {
        (b, a)
    };
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Absolute difference of the time coordinates, in days.
pub fn temporal_gap(a: &SpatioTemporalPoint, b: &SpatioTemporalPoint) -> f64 {
    (a.time - b.time).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lon: f64, lat: f64, t: u32) -> SpatioTemporalPoint {
        SpatioTemporalPoint::new(lon, lat, t).unwrap()
    }

    #[test]
    fn identical_points_have_zero_distance() {
        assert_eq!(haversine_km(&p(72.826, 18.975, 0), &p(72.826, 18.975, 0)), 0.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        // Same longitude: the distance is R * dlat in radians.
        let expected = EARTH_RADIUS_KM * 1.0_f64.to_radians();
        let d = haversine_km(&p(72.826, 18.975, 0), &p(72.826, 19.975, 4));
        assert!((d - expected).abs() < 1e-6);
        assert!((d - 111.195).abs() < 0.01);
    }

    #[test]
    fn quarter_great_circle() {
        let d = haversine_km(&p(0.0, 0.0, 0), &p(90.0, 0.0, 0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert!((d - 10007.54).abs() < 0.1);
    }

    #[test]
    fn gaps() {
        assert_eq!(temporal_gap(&p(0.0, 0.0, 3), &p(0.0, 0.0, 3)), 0.0);
        assert_eq!(temporal_gap(&p(0.0, 0.0, 0), &p(0.0, 0.0, 7)), 7.0);
        assert_eq!(temporal_gap(&p(0.0, 0.0, 5), &p(0.0, 0.0, 2)), 3.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SpatioTemporalPoint::new(181.0, 0.0, 0).is_err());
        assert!(SpatioTemporalPoint::new(0.0, -90.5, 0).is_err());
        assert!(SpatioTemporalPoint::with_time(0.0, 0.0, -1.0).is_err());
        assert!(SpatioTemporalPoint::with_time(f64::NAN, 0.0, 0.0).is_err());
    }

    fn arb_point() -> impl Strategy<Value = SpatioTemporalPoint> {
        (-180.0..180.0f64, -89.0..89.0f64, 0u32..30).prop_map(|(lo, la, t)| p(lo, la, t))
    }

    proptest! {
        #[test]
        fn symmetric_and_non_negative(a in arb_point(), b in arb_point()) {
            let d = haversine_km(&a, &b);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, haversine_km(&b, &a));
            prop_assert_eq!(temporal_gap(&a, &b), temporal_gap(&b, &a));
        }

        #[test]
        fn triangle_inequality(a in arb_point(), b in arb_point(), c in arb_point()) {
            let ab = haversine_km(&a, &b);
            let bc = haversine_km(&b, &c);
            let ac = haversine_km(&a, &c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-9) + 1e-9);
        }
    }
}
