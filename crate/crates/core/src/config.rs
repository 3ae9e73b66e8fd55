//! Resolved runtime configuration shared by the CLI and the HTTP service.

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::dedupe::DEDUP_THRESHOLD_M;
use crate::detection::DetectionConfig;
use crate::governance::GovernanceConfig;
use crate::gps::ClockOffset;
use crate::segment::ATTRIBUTION_RADIUS_M;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone)]
pub struct Config {
    pub store_path: PathBuf,
    pub clock_offset: ClockOffset,
    pub detection: DetectionConfig,
    pub dedup_threshold_m: f64,
    pub attribution_radius_m: f64,
    pub governance: GovernanceConfig,
    pub osrm_url: Option<String>,
    pub webhook_url: Option<String>,
    pub webhook_token: Option<String>,
    pub webhook_max_attempts: u32,
    pub webhook_backoff: Duration,
    pub session_ttl: Duration,
    pub ingest_per_hour: u32,
    /// Largest accepted ingest request body.
    pub max_upload_bytes: usize,
    /// Alerts listed in a health report.
    pub report_events: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_path: PathBuf::from("roadwatch.db"),
            clock_offset: ClockOffset::DEFAULT,
            detection: DetectionConfig::default(),
            dedup_threshold_m: DEDUP_THRESHOLD_M,
            attribution_radius_m: ATTRIBUTION_RADIUS_M,
            governance: GovernanceConfig::default(),
            osrm_url: None,
            webhook_url: None,
            webhook_token: None,
            webhook_max_attempts: 3,
            webhook_backoff: Duration::from_millis(500),
            session_ttl: Duration::from_secs(12 * 3600),
            ingest_per_hour: 10,
            max_upload_bytes: 32 * 1024 * 1024,
            report_events: 10,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError(format!("{name} must be a positive number, got {v}")))
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("dedup threshold", self.dedup_threshold_m)?;
        positive("attribution radius", self.attribution_radius_m)?;
        positive("coverage radius", self.governance.coverage_radius_m)?;
        positive("warn density", self.governance.density_warn_per_km)?;
        positive("severe density", self.governance.density_severe_per_km)?;
        positive("moderate severity ratio", self.detection.severity.moderate)?;
        positive("severe severity ratio", self.detection.severity.severe)?;
        if self.governance.density_severe_per_km <= self.governance.density_warn_per_km {
            return Err(ConfigError("severe density must exceed warn density".into()));
        }
        if self.detection.severity.severe <= self.detection.severity.moderate {
            return Err(ConfigError(
                "severe severity ratio must exceed the moderate ratio".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.detection.confidence_floor) {
            return Err(ConfigError("confidence floor must lie in [0, 1]".into()));
        }
        let durations = [
            ("alert cooldown", self.governance.alert_cooldown),
            ("session ttl", self.session_ttl),
            ("max GPS gap", self.detection.locate.max_gap),
        ];
        for (name, d) in durations {
            if d.is_zero() {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if self.webhook_max_attempts == 0 || self.ingest_per_hour == 0 || self.max_upload_bytes == 0 {
            return Err(ConfigError(
                "retry count, ingest rate and upload limit must be positive".into(),
            ));
        }
        // beyond +-24h the offset is a misconfiguration rather than a clock skew
        if self.clock_offset.seconds().abs() > 24 * 3600 {
            return Err(ConfigError(format!(
                "clock offset {} is beyond one day",
                self.clock_offset
            )));
        }
        Ok(())
    }
}
