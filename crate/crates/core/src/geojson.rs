//! GeoJSON interchange for potholes (Point) and segments (LineString).
//!
//! Coordinates are written lon-first. The public form omits contractor
//! contact details and account references; the private form adds them plus
//! row versions so that import of a private export restores every persisted
//! field.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedupe::{Pothole, PotholeStatus};
use crate::detection::SeverityGrade;
use crate::geo::LatLon;
use crate::governance::HealthState;
use crate::segment::{ContractMetadata, GeometryError, Polyline, RoadSegment};

#[derive(Debug, Error)]
pub enum GeoJsonError {
    #[error("not a GeoJSON FeatureCollection: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("feature {index}: {reason}")]
    Feature { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Public,
    /// Includes contractor contacts, creators and row versions.
    Private,
}

#[derive(Serialize, Deserialize)]
struct FeatureCollection<F> {
    #[serde(rename = "type")]
    kind: CollectionTag,
    features: Vec<F>,
}

#[derive(Serialize, Deserialize)]
enum CollectionTag {
    FeatureCollection,
}

#[derive(Serialize, Deserialize)]
enum FeatureTag {
    Feature,
}

#[derive(Serialize, Deserialize)]
struct Feature<P> {
    #[serde(rename = "type")]
    kind: FeatureTag,
    id: i64,
    geometry: Geometry,
    properties: P,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum Geometry {
    Point { coordinates: [f64; 2] },
    LineString { coordinates: Vec<[f64; 2]> },
}

#[derive(Serialize, Deserialize)]
struct PotholeProps {
    severity: SeverityGrade,
    status: PotholeStatus,
    first_seen: DateTime<Utc>,
    last_seen: DateTime<Utc>,
    detection_count: u32,
    segment_id: Option<i64>,
    thumbnail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct SegmentProps {
    health: HealthState,
    contractor_name: String,
    construction_date: NaiveDate,
    budget: f64,
    warranty_end: NaiveDate,
    length_m: f64,
    category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contractor_contact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AnyProps {
    Segment(SegmentProps),
    Pothole(PotholeProps),
}

fn pothole_feature(p: &Pothole, vis: Visibility) -> Feature<AnyProps> {
    Feature {
        kind: FeatureTag::Feature,
        id: p.id,
        geometry: Geometry::Point {
            coordinates: [p.lon, p.lat],
        },
        properties: AnyProps::Pothole(PotholeProps {
            severity: p.severity,
            status: p.status,
            first_seen: p.first_seen,
            last_seen: p.last_seen,
            detection_count: p.detection_count,
            segment_id: p.segment_id,
            thumbnail: p.thumbnail.clone(),
            version: (vis == Visibility::Private).then_some(p.version),
        }),
    }
}

fn segment_feature(s: &RoadSegment, vis: Visibility) -> Feature<AnyProps> {
    let private = vis == Visibility::Private;
    Feature {
        kind: FeatureTag::Feature,
        id: s.id,
        geometry: Geometry::LineString {
            coordinates: s.geometry.vertices().iter().map(|v| [v.lon, v.lat]).collect(),
        },
        properties: AnyProps::Segment(SegmentProps {
            health: s.health,
            contractor_name: s.contract.contractor_name.clone(),
            construction_date: s.contract.construction_date,
            budget: s.contract.budget,
            warranty_end: s.contract.warranty_end,
            length_m: s.length_m,
            category: s.contract.category.clone(),
            contractor_contact: private.then(|| s.contract.contractor_contact.clone()),
            created_by: private.then(|| s.created_by.clone()),
            version: private.then_some(s.version),
        }),
    }
}

/// One FeatureCollection holding the segments followed by the potholes, each
/// in the order given.
pub fn export_geojson(potholes: &[Pothole], segments: &[RoadSegment], vis: Visibility) -> String {
    let features = segments
        .iter()
        .map(|s| segment_feature(s, vis))
        .chain(potholes.iter().map(|p| pothole_feature(p, vis)))
        .collect();
    let fc = FeatureCollection {
        kind: CollectionTag::FeatureCollection,
        features,
    };
    serde_json::to_string(&fc).expect("GeoJSON features always serialize")
}

/// Parsed contents of a FeatureCollection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Imported {
    pub potholes: Vec<Pothole>,
    pub segments: Vec<RoadSegment>,
}

/// Inverse of [`export_geojson`] for private exports. Public exports import
/// with empty contacts and creators and version 1.
pub fn import_geojson(text: &str) -> Result<Imported, GeoJsonError> {
    let fc: FeatureCollection<Feature<serde_json::Value>> = serde_json::from_str(text)?;
    let mut out = Imported::default();
    for (index, f) in fc.features.into_iter().enumerate() {
        let bad = |reason: String| GeoJsonError::Feature { index, reason };
        match f.geometry {
            Geometry::Point {
                coordinates: [lon, lat],
            } => {
                let props: PotholeProps =
                    serde_json::from_value(f.properties).map_err(|e| bad(e.to_string()))?;
                if !LatLon::new(lat, lon).is_valid() {
                    return Err(bad("coordinates out of range".into()));
                }
                out.potholes.push(Pothole {
                    id: f.id,
                    lat,
                    lon,
                    severity: props.severity,
                    status: props.status,
                    first_seen: props.first_seen,
                    last_seen: props.last_seen,
                    detection_count: props.detection_count,
                    thumbnail: props.thumbnail,
                    segment_id: props.segment_id,
                    version: props.version.unwrap_or(1),
                });
            }
            Geometry::LineString { coordinates } => {
                let props: SegmentProps =
                    serde_json::from_value(f.properties).map_err(|e| bad(e.to_string()))?;
                let geometry = Polyline::new(
                    coordinates
                        .iter()
                        .map(|[lon, lat]| LatLon::new(*lat, *lon))
                        .collect(),
                )
                .map_err(|e: GeometryError| bad(e.to_string()))?;
                out.segments.push(RoadSegment {
                    id: f.id,
                    geometry,
                    contract: ContractMetadata {
                        contractor_name: props.contractor_name,
                        contractor_contact: props.contractor_contact.unwrap_or_default(),
                        construction_date: props.construction_date,
                        budget: props.budget,
                        warranty_end: props.warranty_end,
                        category: props.category,
                    },
                    health: props.health,
                    length_m: props.length_m,
                    created_by: props.created_by.unwrap_or_default(),
                    version: props.version.unwrap_or(1),
                });
            }
        }
    }
    Ok(out)
}
