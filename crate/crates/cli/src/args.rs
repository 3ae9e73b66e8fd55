use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use roadwatch_core::store::Role;
use roadwatch_core::{ClockOffset, Config};

#[derive(Debug, Parser)]
#[command(
    name = "roadwatch",
    version,
    about = "Pothole registry and road-segment health governance"
)]
pub struct Cli {
    #[command(flatten)]
    pub settings: Settings,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Flags win over the environment.
#[derive(Debug, Args)]
pub struct Settings {
    /// SQLite database file.
    #[arg(long, global = true, env = "ROADWATCH_STORE", default_value = "roadwatch.db")]
    pub store: PathBuf,
    /// Dashcam clock minus UTC, [-]HH:MM:SS.
    #[arg(long, global = true, env = "ROADWATCH_CLOCK_OFFSET", value_parser = parse_offset)]
    pub offset: Option<ClockOffset>,
    /// OSRM base URL for routed segments.
    #[arg(long, global = true, env = "ROADWATCH_OSRM_URL")]
    pub osrm_url: Option<String>,
    /// Alert webhook endpoint.
    #[arg(long, global = true, env = "ROADWATCH_WEBHOOK_URL")]
    pub webhook_url: Option<String>,
    #[arg(long, global = true, env = "ROADWATCH_WEBHOOK_TOKEN", hide_env_values = true)]
    pub webhook_token: Option<String>,
    #[arg(long, global = true, env = "ROADWATCH_WEBHOOK_MAX_ATTEMPTS")]
    pub webhook_max_attempts: Option<u32>,
    #[arg(long, global = true, env = "ROADWATCH_DEDUP_THRESHOLD_M")]
    pub dedup_threshold_m: Option<f64>,
    #[arg(long, global = true, env = "ROADWATCH_ATTRIBUTION_RADIUS_M")]
    pub attribution_radius_m: Option<f64>,
    #[arg(long, global = true, env = "ROADWATCH_COVERAGE_RADIUS_M")]
    pub coverage_radius_m: Option<f64>,
    #[arg(long, global = true, env = "ROADWATCH_DENSITY_WARN_PER_KM")]
    pub density_warn_per_km: Option<f64>,
    #[arg(long, global = true, env = "ROADWATCH_DENSITY_SEVERE_PER_KM")]
    pub density_severe_per_km: Option<f64>,
    #[arg(long, global = true, env = "ROADWATCH_CONFIDENCE_FLOOR")]
    pub confidence_floor: Option<f64>,
    #[arg(long, global = true, env = "ROADWATCH_INGEST_PER_HOUR")]
    pub ingest_per_hour: Option<u32>,
    #[arg(long, global = true, env = "ROADWATCH_SESSION_TTL_HOURS")]
    pub session_ttl_hours: Option<u64>,
    /// Comma-separated addresses told about every segment alert.
    #[arg(
        long,
        global = true,
        env = "ROADWATCH_AUTHORITY_CONTACTS",
        value_delimiter = ','
    )]
    pub authority_contacts: Option<Vec<String>>,
    /// Comma-separated addresses added when a segment turns Red.
    #[arg(
        long,
        global = true,
        env = "ROADWATCH_ESCALATION_CONTACTS",
        value_delimiter = ','
    )]
    pub escalation_contacts: Option<Vec<String>>,
    /// Pins the current time (RFC 3339); for replays and tests.
    #[arg(long, global = true, env = "ROADWATCH_NOW", hide = true)]
    pub now: Option<DateTime<Utc>>,
}

fn parse_offset(s: &str) -> Result<ClockOffset, String> {
    s.parse()
}

impl Settings {
    pub fn config(&self) -> Config {
        let mut c = Config {
            store_path: self.store.clone(),
            osrm_url: self.osrm_url.clone(),
            webhook_url: self.webhook_url.clone(),
            webhook_token: self.webhook_token.clone(),
            ..Config::default()
        };
        if let Some(v) = self.offset {
            c.clock_offset = v;
        }
        if let Some(v) = self.webhook_max_attempts {
            c.webhook_max_attempts = v;
        }
        if let Some(v) = self.dedup_threshold_m {
            c.dedup_threshold_m = v;
        }
        if let Some(v) = self.attribution_radius_m {
            c.attribution_radius_m = v;
        }
        if let Some(v) = self.coverage_radius_m {
            c.governance.coverage_radius_m = v;
        }
        if let Some(v) = self.density_warn_per_km {
            c.governance.density_warn_per_km = v;
        }
        if let Some(v) = self.density_severe_per_km {
            c.governance.density_severe_per_km = v;
        }
        if let Some(v) = self.confidence_floor {
            c.detection.confidence_floor = v;
        }
        if let Some(v) = self.ingest_per_hour {
            c.ingest_per_hour = v;
        }
        if let Some(h) = self.session_ttl_hours {
            c.session_ttl = Duration::from_secs(h.saturating_mul(3600));
        }
        if let Some(v) = &self.authority_contacts {
            c.governance.authority_contacts = v.clone();
        }
        if let Some(v) = &self.escalation_contacts {
            c.governance.escalation_contacts = v.clone();
        }
        c
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now.unwrap_or_else(Utc::now)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline on one drive and print its statistics.
    Ingest {
        /// Detector output, one JSON object per frame.
        #[arg(long)]
        detections: PathBuf,
        /// GPS log CSV.
        #[arg(long)]
        gps: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "ROADWATCH_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "ROADWATCH_BIND", default_value = "127.0.0.1")]
        bind: String,
    },
    /// Print a segment's health report.
    Report {
        #[arg(long)]
        segment: i64,
    },
    /// Manage authority accounts.
    Account {
        #[command(subcommand)]
        action: AccountCommand,
    },
    /// Run one governance evaluation pass over every segment.
    Tick,
    /// Retry delivery of alerts still pending.
    Dispatch,
    /// Write every pothole and segment as GeoJSON.
    Export {
        #[arg(long, value_enum, default_value_t = ExportKind::Private)]
        visibility: ExportKind,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a private GeoJSON export.
    Import {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AccountCommand {
    /// Create an account. The password is read from the terminal, or from
    /// the first line of stdin when it is not a terminal.
    Create {
        #[arg(long)]
        username: String,
        #[arg(long, default_value = "authority", value_parser = parse_role)]
        role: Role,
    },
}

fn parse_role(s: &str) -> Result<Role, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    Public,
    Private,
}
