//! Detector output ingest, severity grading and geotagging.

use std::collections::HashSet;

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gps::{locate, to_utc, ClockOffset, GpsTrack, LocateConfig, LocateError};
use crate::timestamp::{normalize_timestamp, MisreadTable, TimestampError};

/// Largest Base64 thumbnail kept per pothole.
pub const THUMBNAIL_CAP_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame_id: u64,
    pub raw_timestamp_text: String,
    pub frame_w: u32,
    pub frame_h: u32,
    pub boxes: Vec<BoundingBox>,
    #[serde(default)]
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityGrade {
    Minor,
    Moderate,
    Severe,
}

impl SeverityGrade {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Minor => "minor",
            Self::Moderate => "moderate",
            Self::Severe => "severe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "minor" => Some(Self::Minor),
            "moderate" => Some(Self::Moderate),
            "severe" => Some(Self::Severe),
            _ => None,
        }
    }
}

/// Box-area / frame-area cut points. Lower bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityThresholds {
    pub moderate: f64,
    pub severe: f64,
}

impl Default for SeverityThresholds {
    fn default() -> Self {
        Self {
            moderate: 0.005,
            severe: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("bounding box has zero area")]
pub struct DegenerateBox;

pub fn grade_severity(
    b: &BoundingBox,
    frame_w: u32,
    frame_h: u32,
    thresholds: &SeverityThresholds,
) -> Result<SeverityGrade, DegenerateBox> {
    let area = b.w * b.h;
    if area <= 0.0 || !area.is_finite() {
        return Err(DegenerateBox);
    }
    let r = area / (f64::from(frame_w) * f64::from(frame_h));
    Ok(if r >= thresholds.severe {
        SeverityGrade::Severe
    } else if r >= thresholds.moderate {
        SeverityGrade::Moderate
    } else {
        SeverityGrade::Minor
    })
}

/// One geotagged box, before deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lat: f64,
    pub lon: f64,
    pub observed_at: DateTime<Utc>,
    pub severity: SeverityGrade,
    pub confidence: f64,
    pub thumbnail: Option<String>,
    pub source_frame: u64,
    pub box_index: u32,
}

impl Observation {
    pub fn position(&self) -> crate::geo::LatLon {
        crate::geo::LatLon::new(self.lat, self.lon)
    }

    /// Canonical clustering order.
    pub fn sort_key(&self) -> (DateTime<Utc>, u64, u32) {
        (self.observed_at, self.source_frame, self.box_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub severity: SeverityThresholds,
    /// Boxes below this confidence are dropped.
    pub confidence_floor: f64,
    pub thumbnail_cap_bytes: usize,
    pub misreads: MisreadTable,
    pub locate: LocateConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            severity: SeverityThresholds::default(),
            confidence_floor: 0.25,
            thumbnail_cap_bytes: THUMBNAIL_CAP_BYTES,
            misreads: MisreadTable::default(),
            locate: LocateConfig::default(),
        }
    }
}

/// Box counts per reason they did not become observations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub malformed_timestamp: u64,
    pub invalid_timestamp: u64,
    pub outside_track: u64,
    pub gap_too_large: u64,
    pub antimeridian: u64,
    pub degenerate_box: u64,
    pub invalid_box: u64,
    pub low_confidence: u64,
}

impl SkipCounts {
    pub fn total(&self) -> u64 {
        self.malformed_timestamp
            + self.invalid_timestamp
            + self.outside_track
            + self.gap_too_large
            + self.antimeridian
            + self.degenerate_box
            + self.invalid_box
            + self.low_confidence
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeotagStats {
    pub frames: u64,
    pub frames_skipped: u64,
    pub boxes: u64,
    pub observations: u64,
    pub thumbnails_dropped: u64,
    pub skipped: SkipCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineDiagnostic {
    pub line: usize,
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("detections file has {} invalid line(s)", diagnostics.len())]
pub struct DetectionsParseError {
    pub diagnostics: Vec<LineDiagnostic>,
}

/// Parses the JSON Lines detections file. Every bad line is reported, not
/// just the first.
pub fn parse_detections_jsonl(text: &str) -> Result<Vec<DetectionRecord>, DetectionsParseError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    let mut diag = |line: usize, class: &str, message: String| {
        diagnostics.push(LineDiagnostic {
            line,
            class: class.to_string(),
            message,
        })
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                diag(line, "json", e.to_string());
                continue;
            }
        };
        if rec.frame_w == 0 || rec.frame_h == 0 {
            diag(line, "invalid_frame", "frame dimensions must be positive".into());
            continue;
        }
        if let Some(t) = &rec.thumbnail {
            if let Err(e) = base64::engine::general_purpose::STANDARD.decode(t) {
                diag(line, "invalid_thumbnail", e.to_string());
                continue;
            }
        }
        if !seen.insert(rec.frame_id) {
            diag(
                line,
                "duplicate_frame_id",
                format!("frame_id {} repeats", rec.frame_id),
            );
            continue;
        }
        records.push(rec);
    }
    if diagnostics.is_empty() {
        Ok(records)
    } else {
        Err(DetectionsParseError { diagnostics })
    }
}

fn box_is_valid(b: &BoundingBox, frame_w: u32, frame_h: u32) -> bool {
    let finite = [b.x, b.y, b.w, b.h, b.confidence].iter().all(|v| v.is_finite());
    finite
        && b.x >= 0.0
        && b.y >= 0.0
        && b.w >= 0.0
        && b.h >= 0.0
        && b.x + b.w <= f64::from(frame_w)
        && b.y + b.h <= f64::from(frame_h)
        && (0.0..=1.0).contains(&b.confidence)
}

/// Geotags every box of every record. Failures are counted by class; the
/// observation list comes back in canonical clustering order.
pub fn geotag_batch(
    records: &[DetectionRecord],
    track: &GpsTrack,
    offset: ClockOffset,
    cfg: &DetectionConfig,
) -> (Vec<Observation>, GeotagStats) {
    let mut stats = GeotagStats::default();
    let mut out = Vec::new();

    for rec in records {
        stats.frames += 1;
        let n_boxes = rec.boxes.len() as u64;
        stats.boxes += n_boxes;

        let position = normalize_timestamp(&rec.raw_timestamp_text, &cfg.misreads)
            .map_err(|e| match e {
                TimestampError::MalformedTimestamp(_) => &mut stats.skipped.malformed_timestamp,
                TimestampError::InvalidDate(_) => &mut stats.skipped.invalid_timestamp,
            })
            .and_then(|frame| {
                let at = to_utc(frame, offset);
                locate(track, at, &cfg.locate)
                    .map(|p| (at, p))
                    .map_err(|e| match e {
                        LocateError::OutsideTrackSpan => &mut stats.skipped.outside_track,
                        LocateError::GapTooLarge(_) => &mut stats.skipped.gap_too_large,
                        LocateError::AntimeridianCrossing => &mut stats.skipped.antimeridian,
                    })
            });
        let (at, pos) = match position {
            Ok(v) => v,
            Err(counter) => {
                *counter += n_boxes;
                stats.frames_skipped += 1;
                continue;
            }
        };

        let thumbnail = match &rec.thumbnail {
            Some(t) if t.len() > cfg.thumbnail_cap_bytes => {
                stats.thumbnails_dropped += 1;
                None
            }
            other => other.clone(),
        };

        for (i, b) in rec.boxes.iter().enumerate() {
            if !box_is_valid(b, rec.frame_w, rec.frame_h) {
                stats.skipped.invalid_box += 1;
                continue;
            }
            let severity = match grade_severity(b, rec.frame_w, rec.frame_h, &cfg.severity) {
                Ok(s) => s,
                Err(DegenerateBox) => {
                    stats.skipped.degenerate_box += 1;
                    continue;
                }
            };
            if b.confidence < cfg.confidence_floor {
                stats.skipped.low_confidence += 1;
                continue;
            }
            out.push(Observation {
                lat: pos.lat,
                lon: pos.lon,
                observed_at: at,
                severity,
                confidence: b.confidence,
                thumbnail: thumbnail.clone(),
                source_frame: rec.frame_id,
                box_index: i as u32,
            });
        }
    }
    out.sort_by_key(Observation::sort_key);
    stats.observations = out.len() as u64;
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_m, LatLon};
    use crate::gps::GpsFix;
    use proptest::prelude::*;

    fn bx(w: f64, h: f64) -> BoundingBox {
        BoundingBox {
            x: 0.0,
            y: 0.0,
            w,
            h,
            confidence: 0.9,
        }
    }

    #[test]
    fn grades_follow_area_ratio() {
        let t = SeverityThresholds::default();
        assert_eq!(
            grade_severity(&bx(64.0, 48.0), 1920, 1080, &t),
            Ok(SeverityGrade::Minor)
        );
        assert_eq!(
            grade_severity(&bx(300.0, 150.0), 1920, 1080, &t),
            Ok(SeverityGrade::Severe)
        );
        // 144*72 / (1920*1080) is exactly the moderate cut point
        assert_eq!(144.0 * 72.0 / (1920.0 * 1080.0), 0.005);
        assert_eq!(
            grade_severity(&bx(144.0, 72.0), 1920, 1080, &t),
            Ok(SeverityGrade::Moderate)
        );
        assert_eq!(grade_severity(&bx(0.0, 72.0), 1920, 1080, &t), Err(DegenerateBox));
    }

    fn utc(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    /// Northbound track at 1 Hz, 1e-5° latitude per second (~1.11 m/s).
    fn track() -> GpsTrack {
        let t0 = utc("2025-08-13T06:30:00Z");
        GpsTrack::new(
            (0..10)
                .map(|i| GpsFix {
                    utc: t0 + chrono::Duration::seconds(i),
                    lat: 20.0 + 1e-5 * i as f64,
                    lon: 85.0,
                    heading: None,
                    speed: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn record(frame_id: u64, text: &str, boxes: Vec<BoundingBox>) -> DetectionRecord {
        DetectionRecord {
            frame_id,
            raw_timestamp_text: text.into(),
            frame_w: 1920,
            frame_h: 1080,
            boxes,
            thumbnail: None,
        }
    }

    #[test]
    fn single_record_single_observation() {
        // 12:00:47 local == 06:30:03 UTC
        let recs = vec![record(1, "13-08-2025 12:00:47", vec![bx(200.0, 100.0)])];
        let (obs, stats) = geotag_batch(&recs, &track(), ClockOffset::DEFAULT, &DetectionConfig::default());
        assert_eq!(obs.len(), 1);
        assert_eq!((obs[0].lat, obs[0].lon), (20.00003, 85.0));
        assert_eq!(obs[0].observed_at, utc("2025-08-13T06:30:03Z"));
        assert_eq!(stats.observations, 1);
    }

    #[test]
    fn invalid_timestamp_is_counted() {
        let recs = vec![record(1, "99-99-9999 00:00:00", vec![bx(200.0, 100.0)])];
        let (obs, stats) = geotag_batch(&recs, &track(), ClockOffset::DEFAULT, &DetectionConfig::default());
        assert!(obs.is_empty());
        assert_eq!(stats.skipped.invalid_timestamp, 1);
        assert_eq!(stats.frames_skipped, 1);
    }

    #[test]
    fn consecutive_frames_land_within_a_meter() {
        // three frames at 30 FPS share the same whole-second overlay reading
        let recs: Vec<_> = (0..3)
            .map(|i| record(100 + i, "13-08-2025 12:00:49", vec![bx(200.0, 100.0)]))
            .collect();
        let (obs, _) = geotag_batch(&recs, &track(), ClockOffset::DEFAULT, &DetectionConfig::default());
        assert_eq!(obs.len(), 3);
        for pair in obs.windows(2) {
            assert!(haversine_m(pair[0].position(), pair[1].position()) <= 1.0);
        }
        let frames: Vec<u64> = obs.iter().map(|o| o.source_frame).collect();
        assert_eq!(frames, vec![100, 101, 102]);
    }

    #[test]
    fn skip_classes() {
        let cfg = DetectionConfig::default();
        let mut low = bx(200.0, 100.0);
        low.confidence = 0.1;
        let mut outside = bx(200.0, 100.0);
        outside.x = 1800.0;
        let recs = vec![
            record(1, "garbage", vec![bx(10.0, 10.0), bx(10.0, 10.0)]),
            record(2, "13-08-2025 13:00:00", vec![bx(10.0, 10.0)]),
            record(
                3,
                "13-08-2025 12:00:45",
                vec![low, outside, bx(0.0, 5.0), bx(50.0, 50.0)],
            ),
        ];
        let (obs, stats) = geotag_batch(&recs, &track(), ClockOffset::DEFAULT, &cfg);
        assert_eq!(stats.skipped.malformed_timestamp, 2);
        assert_eq!(stats.skipped.outside_track, 1);
        assert_eq!(stats.skipped.low_confidence, 1);
        assert_eq!(stats.skipped.invalid_box, 1);
        assert_eq!(stats.skipped.degenerate_box, 1);
        assert_eq!(obs.len(), 1);
        assert_eq!(stats.boxes, stats.observations + stats.skipped.total());
    }

    #[test]
    fn oversized_thumbnail_is_dropped() {
        let cfg = DetectionConfig {
            thumbnail_cap_bytes: 8,
            ..Default::default()
        };
        let mut rec = record(1, "13-08-2025 12:00:45", vec![bx(50.0, 50.0)]);
        rec.thumbnail = Some("QUJDREVGR0hJSktM".into());
        let (obs, stats) = geotag_batch(&[rec], &track(), ClockOffset::DEFAULT, &cfg);
        assert_eq!(obs[0].thumbnail, None);
        assert_eq!(stats.thumbnails_dropped, 1);
    }

    #[test]
    fn jsonl_parse_and_diagnostics() {
        let good = r#"{"frame_id":1,"raw_timestamp_text":"13-08-2025 12:00:45","frame_w":1920,"frame_h":1080,"boxes":[{"x":1,"y":2,"w":30,"h":40,"confidence":0.8}],"thumbnail":"aGVsbG8="}"#;
        let recs = parse_detections_jsonl(&format!("{good}\n\n")).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].boxes[0].w, 30.0);

        let bad = format!(
            "{good}\n{{not json}}\n{}\n{good}\n{}",
            good.replace("aGVsbG8=", "***"),
            good.replace("\"frame_w\":1920", "\"frame_w\":0")
                .replace("\"frame_id\":1", "\"frame_id\":9"),
        );
        let err = parse_detections_jsonl(&bad).unwrap_err();
        let classes: Vec<(usize, &str)> = err
            .diagnostics
            .iter()
            .map(|d| (d.line, d.class.as_str()))
            .collect();
        assert_eq!(
            classes,
            vec![
                (2, "json"),
                (3, "invalid_thumbnail"),
                (4, "duplicate_frame_id"),
                (5, "invalid_frame")
            ]
        );
    }

    proptest! {
        #[test]
        fn enlarging_a_box_never_lowers_its_grade(
            w in 1.0f64..960.0, h in 1.0f64..540.0, dw in 0.0f64..960.0, dh in 0.0f64..540.0,
        ) {
            let t = SeverityThresholds::default();
            let small = grade_severity(&bx(w, h), 1920, 1080, &t).unwrap();
            let big = grade_severity(&bx(w + dw, h + dh), 1920, 1080, &t).unwrap();
            prop_assert!(big >= small);
        }

        #[test]
        fn counts_are_conserved(
            specs in proptest::collection::vec(
                (0u32..20, proptest::collection::vec((0.0f64..2000.0, 0.0f64..600.0, 0.0f64..1.0), 0..4)),
                0..12,
            )
        ) {
            let recs: Vec<DetectionRecord> = specs
                .iter()
                .enumerate()
                .map(|(i, (sec, boxes))| {
                    let text = if *sec >= 15 {
                        "32-13-2025 12:00:45".to_string()
                    } else {
                        format!("13-08-2025 12:00:{:02}", 40 + sec)
                    };
                    record(i as u64, &text, boxes.iter().map(|(w, h, c)| BoundingBox {
                        x: 0.0, y: 0.0, w: *w, h: *h, confidence: *c,
                    }).collect())
                })
                .collect();
            let (obs, stats) = geotag_batch(&recs, &track(), ClockOffset::DEFAULT, &DetectionConfig::default());
            let total: u64 = recs.iter().map(|r| r.boxes.len() as u64).sum();
            prop_assert_eq!(obs.len() as u64 + stats.skipped.total(), total);
            prop_assert_eq!(stats.boxes, total);
            let again = geotag_batch(&recs, &track(), ClockOffset::DEFAULT, &DetectionConfig::default());
            prop_assert_eq!(serde_json::to_string(&obs).unwrap(), serde_json::to_string(&again.0).unwrap());
            for o in &obs {
                prop_assert_eq!(LatLon::new(o.lat, o.lon).rounded(), o.position());
            }
        }
    }
}
