//! Segment health classification, alert generation, repair verification and
//! webhook delivery.
//!
//! Health is a function of three inputs: the active-pothole density band, whether
//! the warranty is still running, and whether the segment was already flagged
//! to its contractor (Yellow, or Red after a breach). The full table:
//!
//! | density          | warranty | flagged | health |
//! |------------------|----------|---------|--------|
//! | `< warn`         | any      | any     | Green  |
//! | `warn..severe`   | active   | any     | Yellow |
//! | `warn..severe`   | expired  | no      | Orange |
//! | `warn..severe`   | expired  | yes     | Red    |
//! | `>= severe`      | any      | any     | Red    |

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dedupe::{Pothole, PotholeId, PotholeStatus};
use crate::detection::Observation;
use crate::geo::haversine_m;
use crate::gps::{locate, GpsTrack, LocateConfig};
use crate::segment::{RoadSegment, SegmentId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthState {
    Green,
    Yellow,
    Orange,
    Red,
}

impl HealthState {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Green => "green",
            Self::Yellow => "yellow",
            Self::Orange => "orange",
            Self::Red => "red",
        }
    }
}

impl fmt::Display for HealthState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HealthState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "green" => Ok(Self::Green),
            "yellow" => Ok(Self::Yellow),
            "orange" => Ok(Self::Orange),
            "red" => Ok(Self::Red),
            other => Err(format!("unknown health state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceConfig {
    /// Potholes per km at which a segment leaves Green.
    pub density_warn_per_km: f64,
    /// Potholes per km at which a segment is Red outright.
    pub density_severe_per_km: f64,
    pub coverage_radius_m: f64,
    /// Width of the alert de-duplication bucket.
    pub alert_cooldown: Duration,
    pub authority_contacts: Vec<String>,
    pub escalation_contacts: Vec<String>,
}

impl Default for GovernanceConfig {
    fn default() -> Self {
        Self {
            density_warn_per_km: 5.0,
            density_severe_per_km: 20.0,
            coverage_radius_m: 10.0,
            alert_cooldown: Duration::from_secs(24 * 3600),
            authority_contacts: vec!["road-authority@localhost".into()],
            escalation_contacts: vec!["public-works-escalation@localhost".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("segment has zero length")]
pub struct ZeroLengthSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DensityBand {
    Low,
    Elevated,
    Severe,
}

pub fn density_band(density_per_km: f64, cfg: &GovernanceConfig) -> DensityBand {
    if density_per_km >= cfg.density_severe_per_km {
        DensityBand::Severe
    } else if density_per_km >= cfg.density_warn_per_km {
        DensityBand::Elevated
    } else {
        DensityBand::Low
    }
}

/// The decision table in the module docs.
pub fn classify(band: DensityBand, warranty_active: bool, flagged: bool) -> HealthState {
    match (band, warranty_active, flagged) {
        (DensityBand::Low, _, _) => HealthState::Green,
        (DensityBand::Elevated, true, _) => HealthState::Yellow,
        (DensityBand::Elevated, false, false) => HealthState::Orange,
        (DensityBand::Elevated, false, true) => HealthState::Red,
        (DensityBand::Severe, _, _) => HealthState::Red,
    }
}

pub fn warranty_active(warranty_end: NaiveDate, now: DateTime<Utc>) -> bool {
    now.date_naive() <= warranty_end
}

pub fn density_per_km(active: u32, length_m: f64) -> Result<f64, ZeroLengthSegment> {
    if length_m.is_nan() || length_m <= 0.0 {
        return Err(ZeroLengthSegment);
    }
    Ok(f64::from(active) / (length_m / 1000.0))
}

/// Health of `segment` given its Active pothole count. `segment.health` is
/// taken as the prior state.
pub fn evaluate_health(
    segment: &RoadSegment,
    active: u32,
    now: DateTime<Utc>,
    cfg: &GovernanceConfig,
) -> Result<HealthState, ZeroLengthSegment> {
    let d = density_per_km(active, segment.length_m)?;
    let flagged = matches!(segment.health, HealthState::Yellow | HealthState::Red);
    Ok(classify(
        density_band(d, cfg),
        warranty_active(segment.contract.warranty_end, now),
        flagged,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Transition {
    Change {
        from: HealthState,
        to: HealthState,
    },
    /// A flagged segment ran past its warranty deadline unrepaired.
    DeadlineBreach,
    /// Raised by an operator from the health report.
    Manual,
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Change { from, to } => write!(f, "{from}->{to}"),
            Self::DeadlineBreach => f.write_str("deadline_breach"),
            Self::Manual => f.write_str("manual"),
        }
    }
}

impl FromStr for Transition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deadline_breach" => Ok(Self::DeadlineBreach),
            "manual" => Ok(Self::Manual),
            _ => {
                let (a, b) = s
                    .split_once("->")
                    .ok_or_else(|| format!("unknown transition {s:?}"))?;
                Ok(Self::Change {
                    from: a.parse()?,
                    to: b.parse()?,
                })
            }
        }
    }
}

impl From<Transition> for String {
    fn from(t: Transition) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for Transition {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryStatus {
    Pending,
    Sent,
    Failed,
}

impl DeliveryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Sent => "sent",
            Self::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(Self::Pending),
            "sent" => Some(Self::Sent),
            "failed" => Some(Self::Failed),
            _ => None,
        }
    }
}

/// An alert not yet persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDraft {
    pub segment_id: SegmentId,
    pub transition: Transition,
    pub health: HealthState,
    pub recipients: Vec<String>,
    pub message: String,
    pub created_at: DateTime<Utc>,
    pub idempotency_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub id: i64,
    pub segment_id: SegmentId,
    pub transition: Transition,
    pub health: HealthState,
    pub recipients: Vec<String>,
    pub message: String,
    pub created_at: DateTime<Utc>,
    pub delivery_status: DeliveryStatus,
    pub idempotency_key: String,
    pub attempts: u32,
}

/// Hash of (segment, transition, cooldown bucket).
pub fn idempotency_key(
    segment_id: SegmentId,
    transition: &Transition,
    now: DateTime<Utc>,
    cooldown: Duration,
) -> String {
    let bucket = now.timestamp().div_euclid(cooldown.as_secs().max(1) as i64);
    let digest = Sha256::digest(format!("{segment_id}|{transition}|{bucket}").as_bytes());
    hex::encode(digest)
}

/// The alert (if any) a health change calls for. Deterioration reaches the
/// contractor and the road authority, reaching Red also reaches the
/// escalation list, and improvements are reported to the authority only.
pub fn on_state_change(
    segment: &RoadSegment,
    old: HealthState,
    new: HealthState,
    deadline_breach: bool,
    now: DateTime<Utc>,
    cfg: &GovernanceConfig,
) -> Option<AlertDraft> {
    if old == new {
        return None;
    }
    let transition = if deadline_breach && new == HealthState::Red {
        Transition::DeadlineBreach
    } else {
        Transition::Change { from: old, to: new }
    };

    let mut recipients = Vec::new();
    let name = &segment.contract.contractor_name;
    let message = if new > old {
        recipients.push(segment.contract.contractor_contact.clone());
        recipients.extend(cfg.authority_contacts.iter().cloned());
        if new == HealthState::Red {
            recipients.extend(cfg.escalation_contacts.iter().cloned());
        }
        match transition {
            Transition::DeadlineBreach => format!(
                "Segment {} ({name}) was not repaired by the warranty deadline {}; escalated",
                segment.id, segment.contract.warranty_end
            ),
            _ => format!("Segment {} ({name}) deteriorated from {old} to {new}", segment.id),
        }
    } else {
        recipients.extend(cfg.authority_contacts.iter().cloned());
        format!("Segment {} ({name}) improved from {old} to {new}", segment.id)
    };
    recipients.dedup();

    Some(AlertDraft {
        segment_id: segment.id,
        idempotency_key: idempotency_key(segment.id, &transition, now, cfg.alert_cooldown),
        transition,
        health: new,
        recipients,
        message,
        created_at: now,
    })
}

/// Full re-evaluation of one segment: new health plus the alert it warrants.
pub fn reevaluate(
    segment: &RoadSegment,
    active: u32,
    now: DateTime<Utc>,
    cfg: &GovernanceConfig,
) -> Result<(HealthState, Option<AlertDraft>), ZeroLengthSegment> {
    let new = evaluate_health(segment, active, now, cfg)?;
    let breach = segment.health == HealthState::Yellow
        && new == HealthState::Red
        && density_band(density_per_km(active, segment.length_m)?, cfg) == DensityBand::Elevated;
    Ok((
        new,
        on_state_change(segment, segment.health, new, breach, now, cfg),
    ))
}

/// A later drive used as evidence for repairs.
#[derive(Debug, Clone)]
pub struct Traversal<'a> {
    pub track: &'a GpsTrack,
    pub batch_id: i64,
}

/// Active potholes the traversal drove past without re-detecting them.
///
/// The track is sampled once per second across its span (plus every fix). A
/// pothole counts as covered when a sample lands within the coverage radius;
/// it is resolved if no batch observation lies within the dedup threshold.
pub fn verify_repairs(
    traversal: &Traversal<'_>,
    observations: &[Observation],
    candidates: &[Pothole],
    dedup_threshold_m: f64,
    locate_cfg: &LocateConfig,
    cfg: &GovernanceConfig,
) -> Vec<PotholeId> {
    let samples = sample_track(traversal.track, locate_cfg);
    let mut out: Vec<PotholeId> = candidates
        .iter()
        .filter(|p| p.status == PotholeStatus::Active)
        .filter(|p| {
            samples
                .iter()
                .any(|s| haversine_m(*s, p.position()) <= cfg.coverage_radius_m)
        })
        .filter(|p| {
            !observations
                .iter()
                .any(|o| haversine_m(o.position(), p.position()) <= dedup_threshold_m)
        })
        .map(|p| p.id)
        .collect();
    out.sort_unstable();
    out
}

fn sample_track(track: &GpsTrack, locate_cfg: &LocateConfig) -> Vec<crate::geo::LatLon> {
    let mut pts: Vec<_> = track.fixes().iter().map(|f| f.position()).collect();
    let mut t = track.start();
    while t <= track.end() {
        if let Ok(p) = locate(track, t, locate_cfg) {
            pts.push(p);
        }
        t += chrono::Duration::seconds(1);
    }
    pts
}

/// Outbound webhook used in place of SMS/e-mail/push providers.
#[derive(Debug, Clone)]
pub struct WebhookSink {
    url: String,
    bearer_token: Option<String>,
    max_attempts: u32,
    backoff_base: Duration,
    agent: ureq::Agent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryOutcome {
    pub delivered: bool,
    pub attempts: u32,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WebhookPayload<'a> {
    pub event_id: i64,
    pub segment_id: SegmentId,
    pub transition: String,
    pub health: HealthState,
    pub contractor: &'a str,
    pub recipients: &'a [String],
    pub message: &'a str,
    pub created_at: DateTime<Utc>,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>, bearer_token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            bearer_token,
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            agent,
        }
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff_base: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff_base = backoff_base;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs the payload, retrying non-2xx answers and transport errors with
    /// exponential backoff.
    pub fn deliver(&self, payload: &WebhookPayload<'_>) -> DeliveryOutcome {
        let mut last_error = None;
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                thread::sleep(self.backoff_base * 2u32.pow(attempt - 2));
            }
            let mut req = self.agent.post(&self.url);
            if let Some(tok) = &self.bearer_token {
                req = req.header("Authorization", &format!("Bearer {tok}"));
            }
            match req.send_json(payload) {
                Ok(resp) if resp.status().is_success() => {
                    return DeliveryOutcome {
                        delivered: true,
                        attempts: attempt,
                        last_error: None,
                    }
                }
                Ok(resp) => {
                    tracing::warn!(event = payload.event_id, attempt, status = %resp.status(), "webhook rejected alert");
                    last_error = Some(format!("HTTP {}", resp.status()));
                }
                Err(e) => {
                    tracing::warn!(event = payload.event_id, attempt, error = %e, "webhook unreachable");
                    last_error = Some(e.to_string());
                }
            }
        }
        DeliveryOutcome {
            delivered: false,
            attempts: self.max_attempts,
            last_error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::SeverityGrade;
    use crate::geo::{LatLon, EARTH_RADIUS_M};
    use crate::gps::GpsFix;
    use crate::segment::{polyline_length_m, ContractMetadata, Polyline};

    fn at(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    /// Straight east-west segment of roughly `km` kilometres on the equator.
    fn segment(km: f64, warranty_end: &str, health: HealthState) -> RoadSegment {
        let dlon = (km * 1000.0 / EARTH_RADIUS_M).to_degrees();
        let geometry = Polyline::new(vec![LatLon::new(0.0, 0.0), LatLon::new(0.0, dlon)]).unwrap();
        RoadSegment {
            id: 42,
            length_m: polyline_length_m(&geometry),
            geometry,
            contract: ContractMetadata {
                contractor_name: "Acme Roads".into(),
                contractor_contact: "acme@example.org".into(),
                construction_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
                budget: 1.5e7,
                warranty_end: warranty_end.parse().unwrap(),
                category: None,
            },
            health,
            created_by: "1".into(),
            version: 1,
        }
    }

    const NOW: &str = "2025-08-13T10:00:00Z";

    #[test]
    fn decision_table_examples() {
        let cfg = GovernanceConfig::default();
        let now = at(NOW);
        let s = segment(2.0, "2026-01-01", HealthState::Green);
        assert_eq!(evaluate_health(&s, 4, now, &cfg), Ok(HealthState::Green));

        let s = segment(1.0, "2026-01-01", HealthState::Green);
        assert_eq!(evaluate_health(&s, 12, now, &cfg), Ok(HealthState::Yellow));
        let s = segment(1.0, "2025-01-01", HealthState::Green);
        assert_eq!(evaluate_health(&s, 12, now, &cfg), Ok(HealthState::Orange));
        let s = segment(1.0, "2025-01-01", HealthState::Yellow);
        assert_eq!(evaluate_health(&s, 12, now, &cfg), Ok(HealthState::Red));

        for w in ["2026-01-01", "2025-01-01"] {
            let s = segment(1.0, w, HealthState::Green);
            assert_eq!(evaluate_health(&s, 25, now, &cfg), Ok(HealthState::Red));
        }
    }

    #[test]
    fn warranty_end_day_is_still_covered() {
        assert!(warranty_active("2025-08-13".parse().unwrap(), at(NOW)));
        assert!(!warranty_active("2025-08-12".parse().unwrap(), at(NOW)));
    }

    #[test]
    fn zero_length_is_an_error() {
        let mut s = segment(1.0, "2026-01-01", HealthState::Green);
        s.length_m = 0.0;
        assert_eq!(
            evaluate_health(&s, 1, at(NOW), &GovernanceConfig::default()),
            Err(ZeroLengthSegment)
        );
    }

    #[test]
    fn alerts_route_by_direction() {
        let cfg = GovernanceConfig::default();
        let now = at(NOW);
        let s = segment(1.0, "2026-01-01", HealthState::Green);

        let a = on_state_change(&s, HealthState::Green, HealthState::Yellow, false, now, &cfg).unwrap();
        assert_eq!(
            a.recipients,
            vec!["acme@example.org".to_string(), "road-authority@localhost".into()]
        );
        assert_eq!(a.transition.to_string(), "green->yellow");

        let r = on_state_change(&s, HealthState::Yellow, HealthState::Red, true, now, &cfg).unwrap();
        assert_eq!(r.transition, Transition::DeadlineBreach);
        assert!(r
            .recipients
            .contains(&"public-works-escalation@localhost".to_string()));

        let g = on_state_change(&s, HealthState::Yellow, HealthState::Green, false, now, &cfg).unwrap();
        assert_eq!(g.recipients, vec!["road-authority@localhost".to_string()]);

        assert!(on_state_change(&s, HealthState::Red, HealthState::Red, false, now, &cfg).is_none());
    }

    #[test]
    fn idempotency_key_buckets_by_day() {
        let t = Transition::Change {
            from: HealthState::Green,
            to: HealthState::Yellow,
        };
        let day = Duration::from_secs(86_400);
        let morning = idempotency_key(1, &t, at("2025-08-13T01:00:00Z"), day);
        let evening = idempotency_key(1, &t, at("2025-08-13T23:00:00Z"), day);
        let next = idempotency_key(1, &t, at("2025-08-14T00:00:01Z"), day);
        assert_eq!(morning, evening);
        assert_ne!(morning, next);
        assert_ne!(morning, idempotency_key(2, &t, at("2025-08-13T01:00:00Z"), day));
    }

    #[test]
    fn transition_text_round_trip() {
        for t in [
            Transition::DeadlineBreach,
            Transition::Manual,
            Transition::Change {
                from: HealthState::Orange,
                to: HealthState::Green,
            },
        ] {
            assert_eq!(t.to_string().parse::<Transition>().unwrap(), t);
        }
    }

    fn track_along_equator(offset_m: f64) -> GpsTrack {
        // 1 Hz, ~5.6 m/s eastbound, `offset_m` north of the pothole row
        let lat = (offset_m / EARTH_RADIUS_M).to_degrees();
        let t0 = at("2025-09-01T06:00:00Z");
        GpsTrack::new(
            (0..20)
                .map(|i| GpsFix {
                    utc: t0 + chrono::Duration::seconds(i),
                    lat,
                    lon: 0.00005 * i as f64,
                    heading: None,
                    speed: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn active(id: i64, lat: f64, lon: f64) -> Pothole {
        Pothole {
            id,
            lat,
            lon,
            severity: SeverityGrade::Moderate,
            status: PotholeStatus::Active,
            first_seen: at("2025-08-13T06:30:00Z"),
            last_seen: at("2025-08-13T06:30:00Z"),
            detection_count: 3,
            thumbnail: None,
            segment_id: Some(42),
            version: 1,
        }
    }

    #[test]
    fn repair_verification_rules() {
        let cfg = GovernanceConfig::default();
        let loc = LocateConfig::default();
        let p = active(1, 0.0, 0.0003);

        let near = track_along_equator(3.0);
        let tr = Traversal {
            track: &near,
            batch_id: 2,
        };
        assert_eq!(
            verify_repairs(&tr, &[], std::slice::from_ref(&p), 2.5, &loc, &cfg),
            vec![1]
        );

        let far = track_along_equator(50.0);
        let tr_far = Traversal {
            track: &far,
            batch_id: 3,
        };
        assert!(verify_repairs(&tr_far, &[], std::slice::from_ref(&p), 2.5, &loc, &cfg).is_empty());

        let redetected = Observation {
            lat: 0.00001,
            lon: 0.0003,
            observed_at: at("2025-09-01T06:00:06Z"),
            severity: SeverityGrade::Moderate,
            confidence: 0.9,
            thumbnail: None,
            source_frame: 1,
            box_index: 0,
        };
        assert!(verify_repairs(&tr, &[redetected], std::slice::from_ref(&p), 2.5, &loc, &cfg).is_empty());

        let mut repaired = p;
        repaired.status = PotholeStatus::Repaired;
        assert!(verify_repairs(&tr, &[], &[repaired], 2.5, &loc, &cfg).is_empty());
    }
}
