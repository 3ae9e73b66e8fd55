//! Contract-annotated road segments: geometry, routing and pothole attribution.

use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_m, LatLon, LocalFrame};
use crate::governance::HealthState;

/// Default pothole-to-segment attribution radius in meters.
pub const ATTRIBUTION_RADIUS_M: f64 = 15.0;

pub type SegmentId = i64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("polyline needs at least two vertices")]
    TooFewVertices,
    #[error("vertex {0} is not a valid coordinate")]
    InvalidVertex(usize),
    #[error("vertex {0} repeats its predecessor")]
    DuplicateVertex(usize),
}

/// Ordered vertices, at least two, with no consecutive repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LatLon>", into = "Vec<LatLon>")]
pub struct Polyline(Vec<LatLon>);

impl Polyline {
    pub fn new(vertices: Vec<LatLon>) -> Result<Self, GeometryError> {
        if vertices.len() < 2 {
            return Err(GeometryError::TooFewVertices);
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.is_valid() {
                return Err(GeometryError::InvalidVertex(i));
            }
            if i > 0 && vertices[i - 1] == *v {
                return Err(GeometryError::DuplicateVertex(i));
            }
        }
        Ok(Self(vertices))
    }

    /// Drops consecutive repeats before validating; routing engines
    /// occasionally emit them.
    pub fn from_dedup(mut vertices: Vec<LatLon>) -> Result<Self, GeometryError> {
        vertices.dedup();
        Self::new(vertices)
    }

    pub fn straight(start: LatLon, end: LatLon) -> Result<Self, GeometryError> {
        Self::new(vec![start, end])
    }

    pub fn vertices(&self) -> &[LatLon] {
        &self.0
    }

    pub fn start(&self) -> LatLon {
        self.0[0]
    }

    pub fn end(&self) -> LatLon {
        self.0[self.0.len() - 1]
    }
}

impl TryFrom<Vec<LatLon>> for Polyline {
    type Error = GeometryError;

    fn try_from(v: Vec<LatLon>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Polyline> for Vec<LatLon> {
    fn from(p: Polyline) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractMetadata {
    pub contractor_name: String,
    /// Where alerts for this contract are delivered.
    pub contractor_contact: String,
    pub construction_date: NaiveDate,
    pub budget: f64,
    pub warranty_end: NaiveDate,
    /// Free-text road category used by map filters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("contractor name is empty")]
    MissingContractor,
    #[error("budget must be a non-negative amount")]
    InvalidBudget,
    #[error("warranty ends before construction")]
    WarrantyBeforeConstruction,
}

impl ContractMetadata {
    pub fn validate(&self) -> Result<(), ContractError> {
        if self.contractor_name.trim().is_empty() {
            return Err(ContractError::MissingContractor);
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(ContractError::InvalidBudget);
        }
        if self.warranty_end < self.construction_date {
            return Err(ContractError::WarrantyBeforeConstruction);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub geometry: Polyline,
    pub contract: ContractMetadata,
    pub health: HealthState,
    pub length_m: f64,
    pub created_by: String,
    #[serde(default)]
    pub version: i64,
}

/// Sum of great-circle leg lengths.
pub fn polyline_length_m(p: &Polyline) -> f64 {
    p.vertices().windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Distance from `p` to the nearest point of the polyline. The foot point of
/// each leg is found in a local plane centered on `p`; the reported distance
/// is the great-circle distance to that foot point.
pub fn point_to_polyline_m(p: LatLon, line: &Polyline) -> f64 {
    let frame = LocalFrame::new(p);
    line.vertices()
        .windows(2)
        .map(|w| {
            let (ax, ay) = frame.project(w[0]);
            let (bx, by) = frame.project(w[1]);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((-ax * dx - ay * dy) / len2).clamp(0.0, 1.0)
            };
            let foot = frame.unproject((ax + t * dx, ay + t * dy));
            haversine_m(p, foot)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Nearest segment within `max_dist_m`, ties to the smaller id.
pub fn attribute_pothole(p: LatLon, segments: &[RoadSegment], max_dist_m: f64) -> Option<(SegmentId, f64)> {
    segments
        .iter()
        .map(|s| (point_to_polyline_m(p, &s.geometry), s.id))
        .filter(|(d, _)| *d <= max_dist_m)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(d, id)| (id, d))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("routing provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("no route between the endpoints (provider said {0:?})")]
    NoRoute(String),
    #[error("no routing provider configured")]
    NotConfigured,
}

/// Anything that can turn two endpoints into a road-following polyline.
pub trait RouteProvider: Send + Sync {
    fn route(&self, start: LatLon, end: LatLon) -> Result<Polyline, RoutingError>;
}

/// OSRM `route` service client.
#[derive(Debug, Clone)]
pub struct OsrmClient {
    base_url: String,
    agent: ureq::Agent,
}

impl OsrmClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(15)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    /// Request URL; OSRM wants `lon,lat` order on the wire.
    pub fn route_url(&self, start: LatLon, end: LatLon) -> String {
        format!(
            "{}/route/v1/driving/{},{};{},{}?overview=full&geometries=geojson",
            self.base_url, start.lon, start.lat, end.lon, end.lat
        )
    }
}

#[derive(Deserialize)]
struct OsrmResponse {
    code: String,
    #[serde(default)]
    routes: Vec<OsrmRoute>,
}

#[derive(Deserialize)]
struct OsrmRoute {
    geometry: OsrmGeometry,
}

#[derive(Deserialize)]
struct OsrmGeometry {
    coordinates: Vec<[f64; 2]>,
}

impl RouteProvider for OsrmClient {
    fn route(&self, start: LatLon, end: LatLon) -> Result<Polyline, RoutingError> {
        let url = self.route_url(start, end);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| RoutingError::ProviderUnreachable(e.to_string()))?;
        let status = resp.status();
        // OSRM reports NoRoute etc. with a 400 and a JSON body
        let body: OsrmResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RoutingError::ProviderUnreachable(format!("HTTP {status}: unreadable body: {e}")))?;
        if body.code != "Ok" {
            return Err(RoutingError::NoRoute(body.code));
        }
        let route = body
            .routes
            .into_iter()
            .next()
            .ok_or_else(|| RoutingError::NoRoute("empty routes".into()))?;
        let vertices = route
            .geometry
            .coordinates
            .into_iter()
            .map(|[lon, lat]| LatLon::new(lat, lon))
            .collect();
        Polyline::from_dedup(vertices).map_err(|e| RoutingError::NoRoute(e.to_string()))
    }
}
