//! GPS logger tracks: CSV ingest, dashcam clock alignment and interpolation.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LatLon;
use crate::timestamp::FrameTimestamp;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpsError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: coordinate out of range")]
    OutOfRangeCoordinate { line: u64 },
    #[error("line {line}: timestamp not strictly after the previous fix")]
    NonMonotonicTime { line: u64 },
    #[error("track needs at least two fixes")]
    EmptyTrack,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LocateError {
    #[error("instant lies outside the track span")]
    OutsideTrackSpan,
    #[error("bracketing fixes are {0} s apart")]
    GapTooLarge(f64),
    #[error("bracketing fixes straddle the antimeridian")]
    AntimeridianCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub utc: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub heading: Option<f64>,
    pub speed: Option<f64>,
}

impl GpsFix {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// A validated, strictly time-ordered track with at least two fixes.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrack {
    fixes: Vec<GpsFix>,
}

impl GpsTrack {
    pub fn new(fixes: Vec<GpsFix>) -> Result<Self, GpsError> {
        if fixes.len() < 2 {
            return Err(GpsError::EmptyTrack);
        }
        for (i, f) in fixes.iter().enumerate() {
            let line = i as u64 + 2;
            if !f.position().is_valid() {
                return Err(GpsError::OutOfRangeCoordinate { line });
            }
            if i > 0 && f.utc <= fixes[i - 1].utc {
                return Err(GpsError::NonMonotonicTime { line });
            }
        }
        Ok(Self { fixes })
    }

    pub fn fixes(&self) -> &[GpsFix] {
        &self.fixes
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.fixes[0].utc
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.fixes[self.fixes.len() - 1].utc
    }
}

/// Dashcam clock minus UTC, in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockOffset(i64);

impl ClockOffset {
    /// IST dashcam against a UTC logger, as calibrated on the reference rig.
    pub const DEFAULT: ClockOffset = ClockOffset(5 * 3600 + 30 * 60 + 44);

    pub const fn from_seconds(s: i64) -> Self {
        Self(s)
    }

    pub const fn seconds(self) -> i64 {
        self.0
    }
}

impl Default for ClockOffset {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for ClockOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let s = self.0.unsigned_abs();
        write!(f, "{sign}{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
    }
}

impl FromStr for ClockOffset {
    type Err = String;

    /// `[-]HH:MM:SS`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let parts: Vec<&str> = body.split(':').collect();
        let [h, m, sec] = parts.as_slice() else {
            return Err(format!("offset must be [-]HH:MM:SS, got {s:?}"));
        };
        let parse = |p: &str, max: i64| -> Result<i64, String> {
            let v: i64 = p.parse().map_err(|_| format!("bad offset field {p:?}"))?;
            if v < 0 || v > max {
                return Err(format!("offset field {p:?} out of range"));
            }
            Ok(v)
        };
        let total = parse(h, 99)? * 3600 + parse(m, 59)? * 60 + parse(sec, 59)?;
        Ok(Self(if neg { -total } else { total }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocateConfig {
    /// Largest allowed spacing between the two fixes bracketing a frame.
    pub max_gap: Duration,
    /// How far before the first / after the last fix a frame may fall.
    pub edge_tolerance: Duration,
}

impl Default for LocateConfig {
    fn default() -> Self {
        Self {
            max_gap: Duration::from_secs(5),
            edge_tolerance: Duration::from_secs(1),
        }
    }
}

/// Parses a `utc_iso,lat,lon[,heading,speed]` CSV log.
pub fn parse_gps_log(bytes: &[u8]) -> Result<GpsTrack, GpsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = rdr.headers().map_err(|e| GpsError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    let names: Vec<&str> = headers.iter().collect();
    let with_extras = match names.as_slice() {
        ["utc_iso", "lat", "lon"] => false,
        ["utc_iso", "lat", "lon", "heading", "speed"] => true,
        _ => {
            return Err(GpsError::MalformedRow {
                line: 1,
                reason: format!("unexpected header {names:?}"),
            })
        }
    };

    let mut fixes: Vec<GpsFix> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GpsError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let malformed = |reason: String| GpsError::MalformedRow { line, reason };
        let expected = if with_extras { 5 } else { 3 };
        if rec.len() != expected {
            return Err(malformed(format!(
                "expected {expected} fields, found {}",
                rec.len()
            )));
        }

        let utc_raw = &rec[0];
        if !utc_raw.ends_with('Z') {
            return Err(malformed(format!("timestamp {utc_raw:?} lacks the Z suffix")));
        }
        let utc = DateTime::parse_from_rfc3339(utc_raw)
            .map_err(|e| malformed(format!("timestamp {utc_raw:?}: {e}")))?
            .with_timezone(&Utc);
        let num = |i: usize, what: &str| -> Result<f64, GpsError> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("{what} {:?} is not a number", &rec[i])))
        };
        let lat = num(1, "lat")?;
        let lon = num(2, "lon")?;
        if !LatLon::new(lat, lon).is_valid() {
            return Err(GpsError::OutOfRangeCoordinate { line });
        }
        let opt = |i: usize, what: &str| -> Result<Option<f64>, GpsError> {
            if !with_extras || rec[i].is_empty() {
                Ok(None)
            } else {
                num(i, what).map(Some)
            }
        };
        let heading = opt(3, "heading")?;
        let speed = opt(4, "speed")?;
        if heading.is_some_and(|h| !(0.0..360.0).contains(&h)) {
            return Err(malformed("heading outside [0, 360)".into()));
        }
        if speed.is_some_and(|s| s < 0.0) {
            return Err(malformed("negative speed".into()));
        }
        if fixes.last().is_some_and(|prev| utc <= prev.utc) {
            return Err(GpsError::NonMonotonicTime { line });
        }
        fixes.push(GpsFix {
            utc,
            lat,
            lon,
            heading,
            speed,
        });
    }
    if fixes.len() < 2 {
        return Err(GpsError::EmptyTrack);
    }
    Ok(GpsTrack { fixes })
}

/// Reinterprets a dashcam wall-clock reading as a UTC instant.
pub fn to_utc(frame: FrameTimestamp, offset: ClockOffset) -> DateTime<Utc> {
    let local = frame
        .to_naive()
        .expect("FrameTimestamp is validated on construction");
    Utc.from_utc_datetime(&local) - chrono::Duration::seconds(offset.seconds())
}

/// Inverse of [`to_utc`], for whole-second instants.
pub fn to_local(utc: DateTime<Utc>, offset: ClockOffset) -> FrameTimestamp {
    use chrono::{Datelike, Timelike};
    let local = (utc + chrono::Duration::seconds(offset.seconds())).naive_utc();
    FrameTimestamp {
        year: local.year(),
        month: local.month(),
        day: local.day(),
        hour: local.hour(),
        minute: local.minute(),
        second: local.second(),
    }
}

/// Position at `at`, linearly interpolated and rounded to five decimals.
pub fn locate(track: &GpsTrack, at: DateTime<Utc>, cfg: &LocateConfig) -> Result<LatLon, LocateError> {
    locate_unrounded(track, at, cfg).map(LatLon::rounded)
}

pub(crate) fn locate_unrounded(
    track: &GpsTrack,
    at: DateTime<Utc>,
    cfg: &LocateConfig,
) -> Result<LatLon, LocateError> {
    let fixes = track.fixes();
    let tol = chrono::Duration::from_std(cfg.edge_tolerance).unwrap_or(chrono::Duration::MAX);

    let idx = match fixes.binary_search_by(|f| f.utc.cmp(&at)) {
        Ok(i) => return Ok(fixes[i].position()),
        Err(i) => i,
    };
    if idx == 0 {
        return if track.start() - at <= tol {
            Ok(fixes[0].position())
        } else {
            Err(LocateError::OutsideTrackSpan)
        };
    }
    if idx == fixes.len() {
        return if at - track.end() <= tol {
            Ok(fixes[idx - 1].position())
        } else {
            Err(LocateError::OutsideTrackSpan)
        };
    }

    let (a, b) = (&fixes[idx - 1], &fixes[idx]);
    let span = b.utc - a.utc;
    let span_s = span.num_nanoseconds().map_or(f64::INFINITY, |n| n as f64 / 1e9);
    if span_s > cfg.max_gap.as_secs_f64() {
        return Err(LocateError::GapTooLarge(span_s));
    }
    if (b.lon - a.lon).abs() > 180.0 {
        return Err(LocateError::AntimeridianCrossing);
    }
    let t = (at - a.utc).num_nanoseconds().unwrap_or(0) as f64 / 1e9 / span_s;
    Ok(LatLon::new(
        a.lat + (b.lat - a.lat) * t,
        a.lon + (b.lon - a.lon) * t,
    ))
}
