//! Spherical geodesy helpers shared by every distance decision in the crate.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Both coordinates rounded to the persisted precision.
    pub fn rounded(self) -> Self {
        Self::new(round5(self.lat), round5(self.lon))
    }
}

/// Rounds a coordinate to five decimal places (~1.1 m at the equator).
pub fn round5(deg: f64) -> f64 {
    (deg * 1e5).round() / 1e5
}

/// Great-circle distance in meters.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();

    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // clamp guards asin against h drifting a hair above 1 for antipodes
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Local equirectangular frame centered on an origin. Good to well under a
/// centimeter at the tens-of-meters scale used for attribution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFrame {
    origin: LatLon,
    cos_lat: f64,
}

impl LocalFrame {
    pub(crate) fn new(origin: LatLon) -> Self {
        Self {
            origin,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    /// Projects to (east, north) meters.
    pub(crate) fn project(&self, p: LatLon) -> (f64, f64) {
        let x = (p.lon - self.origin.lon).to_radians() * EARTH_RADIUS_M * self.cos_lat;
        let y = (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    pub(crate) fn unproject(&self, (x, y): (f64, f64)) -> LatLon {
        let lat = self.origin.lat + (y / EARTH_RADIUS_M).to_degrees();
        let lon = if self.cos_lat.abs() < 1e-12 {
            self.origin.lon
        } else {
            self.origin.lon + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees()
        };
        LatLon::new(lat, lon)
    }
}
