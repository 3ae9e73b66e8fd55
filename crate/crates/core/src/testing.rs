//! In-process HTTP stubs for the routing provider and the alert webhook.
//! Used by the integration and acceptance tests.

use std::net::TcpListener as StdListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{OriginalUri, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{any, get};
use axum::{Json, Router};
use tokio::sync::oneshot;

/// An axum router served on an ephemeral localhost port from a background
/// thread. Stops when dropped.
pub struct StubServer {
    url: String,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(router: Router) -> Self {
        let listener = StdListener::bind("127.0.0.1:0").expect("bind stub listener");
        listener.set_nonblocking(true).expect("nonblocking stub listener");
        let url = format!("http://{}", listener.local_addr().expect("stub address"));
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("stub runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("stub listener");
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Self {
            url,
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A request seen by a stub.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub uri: String,
    pub authorization: Option<String>,
    pub body: Bytes,
}

impl Recorded {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

type Log = Arc<Mutex<Vec<Recorded>>>;

fn record(log: &Log, uri: &OriginalUri, headers: &HeaderMap, body: Bytes) -> usize {
    let mut log = log.lock().expect("stub log");
    log.push(Recorded {
        uri: uri.0.to_string(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned),
        body,
    });
    log.len()
}

/// Webhook sink answering the n-th request with `statuses[n]`, repeating
/// the last entry once the list runs out.
pub struct WebhookStub {
    server: StubServer,
    log: Log,
}

impl WebhookStub {
    pub fn start(statuses: Vec<u16>) -> Self {
        assert!(!statuses.is_empty(), "webhook stub needs at least one status");
        let log: Log = Arc::default();
        let state = (log.clone(), Arc::new(statuses));
        let router = Router::new()
            .route(
                "/{*path}",
                any(
                    |State((log, statuses)): State<(Log, Arc<Vec<u16>>)>,
                     uri: OriginalUri,
                     headers: HeaderMap,
                     body: Bytes| async move {
                        let n = record(&log, &uri, &headers, body);
                        let code = statuses[(n - 1).min(statuses.len() - 1)];
                        StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
                    },
                ),
            )
            .with_state(state);
        Self {
            server: StubServer::start(router),
            log,
        }
    }

    /// Endpoint URL to configure as the webhook.
    pub fn url(&self) -> String {
        format!("{}/hook", self.server.url())
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.log.lock().expect("stub log").clone()
    }
}

/// Routing provider answering every route request with a fixed JSON body.
pub struct OsrmStub {
    server: StubServer,
    log: Log,
}

impl OsrmStub {
    pub fn start(response: serde_json::Value) -> Self {
        let log: Log = Arc::default();
        let state = (log.clone(), Arc::new(response));
        let router = Router::new()
            .route(
                "/route/v1/driving/{coords}",
                get(
                    |State((log, response)): State<(Log, Arc<serde_json::Value>)>,
                     uri: OriginalUri,
                     headers: HeaderMap| async move {
                        record(&log, &uri, &headers, Bytes::new());
                        Json((*response).clone())
                    },
                ),
            )
            .with_state(state);
        Self {
            server: StubServer::start(router),
            log,
        }
    }

    /// An `Ok` answer whose single route follows `lat_lon` vertices.
    pub fn route(lat_lon: &[(f64, f64)]) -> Self {
        let coords: Vec<[f64; 2]> = lat_lon.iter().map(|(lat, lon)| [*lon, *lat]).collect();
        Self::start(serde_json::json!({
            "code": "Ok",
            "routes": [{"geometry": {"type": "LineString", "coordinates": coords}}],
        }))
    }

    pub fn url(&self) -> &str {
        self.server.url()
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.log.lock().expect("stub log").clone()
    }
}

/// Synthetic drives along a meridian near Bhubaneswar.
pub mod fixtures {
    use chrono::{DateTime, Duration, Utc};
    use serde_json::json;

    use crate::geo::LatLon;
    use crate::gps::{to_local, ClockOffset};
    use crate::segment::ContractMetadata;
    use crate::service::{RouteMode, SegmentRequest};

    pub const START_LAT: f64 = 20.29610;
    pub const LON: f64 = 85.82450;
    /// Degrees of latitude per second (about 11 m/s).
    pub const DLAT_PER_S: f64 = 0.00010;

    pub fn instant(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s)
            .expect("fixture instant")
            .with_timezone(&Utc)
    }

    /// Start of drive A.
    pub fn drive_a() -> DateTime<Utc> {
        instant("2025-08-13T06:30:00Z")
    }

    /// Start of drive B, the next day over the same road.
    pub fn drive_b() -> DateTime<Utc> {
        instant("2025-08-14T06:30:00Z")
    }

    /// 1 Hz GPS log heading north from [`START_LAT`].
    pub fn track_csv(start: DateTime<Utc>, fixes: usize) -> String {
        let mut out = String::from("utc_iso,lat,lon,heading,speed\n");
        for i in 0..fixes {
            let t = start + Duration::seconds(i as i64);
            let lat = START_LAT + DLAT_PER_S * i as f64;
            out.push_str(&format!(
                "{},{lat:.5},{LON:.5},0.0,11.1\n",
                t.format("%Y-%m-%dT%H:%M:%SZ")
            ));
        }
        out
    }

    /// Position of the vehicle `secs` into a drive.
    pub fn position_at(secs: i64) -> LatLon {
        LatLon::new(START_LAT + DLAT_PER_S * secs as f64, LON).rounded()
    }

    /// Overlay text for the frame shot at `utc` with the default offset.
    pub fn overlay_text(utc: DateTime<Utc>) -> String {
        to_local(utc, ClockOffset::DEFAULT).to_string()
    }

    /// Three consecutive 30 FPS frames, each with one box on the same
    /// pothole, `secs` into the drive starting at `start`. The overlay shows
    /// whole seconds, with OCR noise on two of the frames.
    pub fn three_frames(start: DateTime<Utc>, secs: i64) -> String {
        let clean = overlay_text(start + Duration::seconds(secs));
        let texts = [clean.clone(), clean.replacen(':', ".", 1), format!("{clean}.066")];
        let thumb = "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNk+M9QDwADhgGAWjR9awAAAABJRU5ErkJggg==";
        texts
            .iter()
            .enumerate()
            .map(|(i, text)| {
                json!({
                    "frame_id": secs as u64 * 30 + i as u64,
                    "raw_timestamp_text": text,
                    "frame_w": 1920,
                    "frame_h": 1080,
                    "boxes": [{"x": 900.0, "y": 700.0, "w": 100.0, "h": 80.0, "confidence": 0.91}],
                    "thumbnail": if i == 0 { json!(thumb) } else { json!(null) },
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }

    /// Frames with no detections, one per second of the drive.
    pub fn clean_frames(start: DateTime<Utc>, secs: i64) -> String {
        (0..secs)
            .map(|s| {
                json!({
                    "frame_id": s as u64 * 30,
                    "raw_timestamp_text": overlay_text(start + Duration::seconds(s)),
                    "frame_w": 1920,
                    "frame_h": 1080,
                    "boxes": [],
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }

    pub fn contract(warranty_end: &str) -> ContractMetadata {
        ContractMetadata {
            contractor_name: "Kalinga Roadworks".into(),
            contractor_contact: "site-office@kalinga.example".into(),
            construction_date: "2024-02-01".parse().expect("fixture date"),
            budget: 4_800_000.0,
            warranty_end: warranty_end.parse().expect("fixture date"),
            category: Some("urban".into()),
        }
    }

    /// A straight segment of about 167 m over seconds 9..=24 of the drive.
    /// One Active pothole on it gives a density of 6 per km.
    pub fn short_segment(warranty_end: &str) -> SegmentRequest {
        SegmentRequest {
            start: LatLon::new(20.29700, LON),
            end: LatLon::new(20.29850, LON),
            mode: RouteMode::Straight,
            fallback: false,
            contract: contract(warranty_end),
        }
    }
}

/// Checks `doc` against the GeoJSON grammar for a FeatureCollection of
/// Point and LineString features with WGS84 positions.
pub fn check_geojson(doc: &serde_json::Value) -> Result<(), String> {
    use serde_json::Value;

    fn position(v: &Value) -> Result<(), String> {
        let a = v.as_array().ok_or("position is not an array")?;
        if a.len() < 2 || a.len() > 3 {
            return Err(format!("position has {} elements", a.len()));
        }
        let lon = a[0].as_f64().ok_or("longitude is not a number")?;
        let lat = a[1].as_f64().ok_or("latitude is not a number")?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(format!("position [{lon}, {lat}] out of range"));
        }
        Ok(())
    }

    let obj = doc.as_object().ok_or("document is not an object")?;
    if obj.get("type") != Some(&Value::from("FeatureCollection")) {
        return Err("type is not FeatureCollection".into());
    }
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or("features is not an array")?;
    for (i, f) in features.iter().enumerate() {
        let at = |e: String| format!("feature {i}: {e}");
        let f = f.as_object().ok_or_else(|| at("not an object".into()))?;
        if f.get("type") != Some(&Value::from("Feature")) {
            return Err(at("type is not Feature".into()));
        }
        match f.get("id") {
            None | Some(Value::String(_)) | Some(Value::Number(_)) => {}
            Some(_) => return Err(at("id is neither string nor number".into())),
        }
        match f.get("properties") {
            Some(Value::Object(_)) | Some(Value::Null) => {}
            _ => return Err(at("properties must be an object or null".into())),
        }
        let g = f
            .get("geometry")
            .and_then(Value::as_object)
            .ok_or_else(|| at("geometry is not an object".into()))?;
        let coords = g.get("coordinates").ok_or_else(|| at("no coordinates".into()))?;
        match g.get("type").and_then(Value::as_str) {
            Some("Point") => position(coords).map_err(at)?,
            Some("LineString") => {
                let line = coords
                    .as_array()
                    .ok_or_else(|| at("LineString coordinates are not an array".into()))?;
                if line.len() < 2 {
                    return Err(at("LineString needs two or more positions".into()));
                }
                for p in line {
                    position(p).map_err(at)?;
                }
            }
            other => return Err(at(format!("unexpected geometry type {other:?}"))),
        }
    }
    Ok(())
}
