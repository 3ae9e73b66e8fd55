//! Pothole geotagging, deduplication and road-segment health governance.
//!
//! Data flows from detector output and a GPS log through
//! [`timestamp`] repair, [`gps`] synchronisation and [`detection`] geotagging
//! into [`dedupe`] clustering, then into the persistent registry in
//! [`store`], where [`segment`] attribution and [`governance`] evaluation
//! decide each road segment's health. [`service`] composes these into
//! transactional operations and [`api`] exposes them over HTTP.

pub mod api;
pub mod auth;
pub mod config;
pub mod dedupe;
pub mod detection;
pub mod geo;
pub mod geojson;
pub mod governance;
pub mod gps;
pub mod segment;
pub mod service;
pub mod store;
#[doc(hidden)]
pub mod testing;
pub mod timestamp;

pub use config::Config;
pub use dedupe::{Pothole, PotholeId, PotholeStatus};
pub use detection::{DetectionRecord, Observation, SeverityGrade};
pub use geo::{haversine_m, LatLon};
pub use geojson::Visibility;
pub use governance::{AlertEvent, DeliveryStatus, HealthState, Transition};
pub use gps::{ClockOffset, GpsTrack};
pub use segment::{ContractMetadata, Polyline, RoadSegment, SegmentId};
pub use service::{Service, ServiceError};
pub use store::{Actor, Store, StoreError};
pub use timestamp::FrameTimestamp;
