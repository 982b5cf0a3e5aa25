//! Coordinates, great-circle distance, and the Equal Earth projection.

use crate::error::Error;

/// IUGG mean Earth radius in kilometers. Every distance in the crate,
/// including the 25/200/750 km evaluation thresholds, is interpreted
/// against this value.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A latitude/longitude pair in degrees on the mean-radius sphere.
///
/// Construction rejects non-finite values and latitudes outside
/// [-90, 90]. Longitudes outside [-180, 180] are wrapped into range, so
/// `new(lat, lon)` and `new(lat, lon + 360)` denote the same point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCoord {
    lat: f64,
    lon: f64,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self, Error> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::NonFiniteCoordinate { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::LatitudeOutOfRange(lat));
        }
        let mut lon = lon;
        // In-range values, including exactly +/-180, pass through
        // untouched; wrapping by whole turns is exact for values that
        // were produced by adding multiples of 360 to an exact input.
        while lon > 180.0 {
            lon -= 360.0;
        }
        while lon < -180.0 {
            lon += 360.0;
        }
        Ok(GeoCoord { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Unitless planar image of a coordinate under the Equal Earth projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
}

/// Great-circle distance in kilometers via the haversine formula.
///
/// Symmetric bit-for-bit, nonnegative, and at most `PI * EARTH_RADIUS_KM`.
pub fn haversine_km(a: GeoCoord, b: GeoCoord) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let lam1 = a.lon.to_radians();
    let lam2 = b.lon.to_radians();
    let sin_dphi = ((phi2 - phi1) / 2.0).sin();
    let sin_dlam = ((lam2 - lam1) / 2.0).sin();
    let h = sin_dphi * sin_dphi + phi1.cos() * phi2.cos() * sin_dlam * sin_dlam;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

// Equal Earth polynomial coefficients (Savric, Patterson & Jenny 2019).
const A1: f64 = 1.340264;
const A2: f64 = -0.081106;
const A3: f64 = 0.000893;
const A4: f64 = 0.003796;

/// Equal Earth projection of a coordinate, on the unit sphere.
///
/// Odd in latitude (`y`) and in longitude (`x`); the origin maps to the
/// origin. |x| stays below 2.71 and |y| below 1.32 over the valid domain.
pub fn equal_earth_project(g: GeoCoord) -> ProjectedPoint {
    let m = 3f64.sqrt() / 2.0;
    let phi = g.lat.to_radians();
    let lam = g.lon.to_radians();
    let theta = (m * phi.sin()).asin();
    let t2 = theta * theta;
    let t6 = t2 * t2 * t2;
    let x = lam * theta.cos() / (m * (A1 + 3.0 * A2 * t2 + t6 * (7.0 * A3 + 9.0 * A4 * t2)));
    let y = theta * (A1 + A2 * t2 + t6 * (A3 + A4 * t2));
    ProjectedPoint { x, y }
}
