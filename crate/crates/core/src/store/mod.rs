//! Embedded SQLite persistence with an append-only audit trail.
//!
//! Every mutating method appends its own audit record inside the same
//! savepoint as the write, so no mutation path can skip the trail. Callers
//! group several mutations into one all-or-nothing unit with
//! [`Store::atomic`].

mod accounts;
mod alerts;
mod potholes;
mod schema;
mod segments;

use std::cell::Cell;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accounts::{Account, Role};
pub use potholes::{BBox, PotholeQuery};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{entity} {id} not found")]
    NotFound { entity: &'static str, id: String },
    #[error("{entity} {id} was modified concurrently (stale version)")]
    ConflictingWrite { entity: &'static str, id: String },
    #[error("malformed bounding box: {0}")]
    MalformedBBox(String),
    #[error("invalid {entity}: {reason}")]
    Invalid { entity: &'static str, reason: String },
    #[error("store schema version {found} is newer than this build supports ({supported})")]
    UnsupportedSchema { found: i64, supported: i64 },
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl StoreError {
    pub(crate) fn not_found(entity: &'static str, id: impl fmt::Display) -> Self {
        Self::NotFound {
            entity,
            id: id.to_string(),
        }
    }

    pub(crate) fn invalid(entity: &'static str, reason: impl fmt::Display) -> Self {
        Self::Invalid {
            entity,
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Who performed a mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Actor {
    /// Automated pipeline and governance decisions.
    System,
    /// Local operator running the CLI.
    Operator,
    Account(i64),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::System => f.write_str("system"),
            Self::Operator => f.write_str("operator"),
            Self::Account(id) => write!(f, "account:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    AccountCreated,
    Login,
    IngestBatch,
    PotholeCreated,
    PotholeUpdated,
    PotholeReopened,
    PotholeRepaired,
    PotholeAttributed,
    PotholeImported,
    SegmentCreated,
    SegmentUpdated,
    SegmentDeleted,
    SegmentImported,
    HealthChanged,
    AlertCreated,
    AlertSent,
    AlertFailed,
}

impl AuditAction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AccountCreated => "account_created",
            Self::Login => "login",
            Self::IngestBatch => "ingest_batch",
            Self::PotholeCreated => "pothole_created",
            Self::PotholeUpdated => "pothole_updated",
            Self::PotholeReopened => "pothole_reopened",
            Self::PotholeRepaired => "pothole_repaired",
            Self::PotholeAttributed => "pothole_attributed",
            Self::PotholeImported => "pothole_imported",
            Self::SegmentCreated => "segment_created",
            Self::SegmentUpdated => "segment_updated",
            Self::SegmentDeleted => "segment_deleted",
            Self::SegmentImported => "segment_imported",
            Self::HealthChanged => "health_changed",
            Self::AlertCreated => "alert_created",
            Self::AlertSent => "alert_sent",
            Self::AlertFailed => "alert_failed",
        }
    }
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: i64,
    pub actor: String,
    pub action: String,
    pub subject: String,
    pub at: DateTime<Utc>,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestBatch {
    pub id: i64,
    pub uploaded_at: DateTime<Utc>,
    pub detections_digest: String,
    pub gps_digest: String,
    pub stats: serde_json::Value,
}

pub(crate) fn fmt_ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub(crate) fn parse_ts(s: &str) -> rusqlite::Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e)))
}

pub(crate) fn parse_col<T: FromStr>(s: &str, what: &str) -> rusqlite::Result<T> {
    decode(s.parse().ok(), s, what)
}

pub(crate) fn decode<T>(v: Option<T>, raw: &str, what: &str) -> rusqlite::Result<T> {
    v.ok_or_else(|| {
        rusqlite::Error::FromSqlConversionFailure(
            0,
            rusqlite::types::Type::Text,
            format!("bad {what} value {raw:?}").into(),
        )
    })
}

pub struct Store {
    conn: Connection,
    depth: Cell<u32>,
    thumbnail_cap: usize,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store").finish_non_exhaustive()
    }
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.execute_batch("PRAGMA foreign_keys = ON;")?;
        // WAL is unavailable for in-memory databases; ignore the answer
        let _: String = conn.query_row("PRAGMA journal_mode = WAL", [], |r| r.get(0))?;
        let store = Self {
            conn,
            depth: Cell::new(0),
            thumbnail_cap: crate::detection::THUMBNAIL_CAP_BYTES,
        };
        store.migrate()?;
        Ok(store)
    }

    pub fn with_thumbnail_cap(mut self, cap: usize) -> Self {
        self.thumbnail_cap = cap;
        self
    }

    pub fn schema_version(&self) -> Result<i64> {
        Ok(self.conn.query_row("PRAGMA user_version", [], |r| r.get(0))?)
    }

    fn migrate(&self) -> Result<()> {
        let current = self.schema_version()?;
        let supported = schema::MIGRATIONS.len() as i64;
        if current > supported {
            return Err(StoreError::UnsupportedSchema {
                found: current,
                supported,
            });
        }
        for (i, script) in schema::MIGRATIONS.iter().enumerate().skip(current as usize) {
            self.atomic(|| {
                self.conn.execute_batch(script)?;
                self.conn
                    .execute_batch(&format!("PRAGMA user_version = {}", i + 1))?;
                Ok::<_, StoreError>(())
            })?;
        }
        Ok(())
    }

    /// Runs `f` inside a savepoint: all of its writes land, or none do.
    /// Nests.
    pub fn atomic<T, E>(&self, f: impl FnOnce() -> std::result::Result<T, E>) -> std::result::Result<T, E>
    where
        E: From<StoreError>,
    {
        let depth = self.depth.get();
        let name = format!("sp{depth}");
        self.conn
            .execute_batch(&format!("SAVEPOINT {name}"))
            .map_err(|e| E::from(e.into()))?;
        self.depth.set(depth + 1);
        let out = f();
        self.depth.set(depth);
        match out {
            Ok(v) => {
                self.conn
                    .execute_batch(&format!("RELEASE {name}"))
                    .map_err(|e| E::from(e.into()))?;
                Ok(v)
            }
            Err(e) => {
                let rollback = self
                    .conn
                    .execute_batch(&format!("ROLLBACK TO {name}; RELEASE {name}"));
                if let Err(re) = rollback {
                    tracing::error!(error = %re, "savepoint rollback failed");
                }
                Err(e)
            }
        }
    }

    pub(crate) fn conn(&self) -> &Connection {
        &self.conn
    }

    pub fn append_audit(
        &self,
        actor: Actor,
        action: AuditAction,
        subject: &str,
        at: DateTime<Utc>,
        detail: serde_json::Value,
    ) -> Result<i64> {
        self.conn.execute(
            "INSERT INTO audit_log (actor, action, subject, at, detail) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![
                actor.to_string(),
                action.as_str(),
                subject,
                fmt_ts(at),
                detail.to_string()
            ],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn audit_log(&self) -> Result<Vec<AuditRecord>> {
        self.audit_since(0)
    }

    /// Records with id greater than `after`, oldest first.
    pub fn audit_since(&self, after: i64) -> Result<Vec<AuditRecord>> {
        let mut stmt = self.conn.prepare(
            "SELECT id, actor, action, subject, at, detail FROM audit_log WHERE id > ?1 ORDER BY id",
        )?;
        let rows = stmt.query_map([after], |r| {
            let detail: String = r.get(5)?;
            Ok(AuditRecord {
                id: r.get(0)?,
                actor: r.get(1)?,
                action: r.get(2)?,
                subject: r.get(3)?,
                at: parse_ts(&r.get::<_, String>(4)?)?,
                detail: serde_json::from_str(&detail).unwrap_or(serde_json::Value::Null),
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn last_audit_id(&self) -> Result<i64> {
        Ok(self
            .conn
            .query_row("SELECT COALESCE(MAX(id), 0) FROM audit_log", [], |r| r.get(0))?)
    }

    /// Audit trail as JSON Lines.
    pub fn export_audit_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in self.audit_log()? {
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn insert_batch(
        &self,
        actor: Actor,
        uploaded_at: DateTime<Utc>,
        detections_digest: &str,
        gps_digest: &str,
        stats: &serde_json::Value,
    ) -> Result<IngestBatch> {
        self.atomic(|| {
            self.conn.execute(
                "INSERT INTO ingest_batches (uploaded_at, detections_digest, gps_digest, stats) VALUES (?1, ?2, ?3, ?4)",
                params![fmt_ts(uploaded_at), detections_digest, gps_digest, stats.to_string()],
            )?;
            let id = self.conn.last_insert_rowid();
            self.append_audit(
                actor,
                AuditAction::IngestBatch,
                &format!("batch:{id}"),
                uploaded_at,
                serde_json::json!({
                    "detections_digest": detections_digest,
                    "gps_digest": gps_digest,
                    "stats": stats,
                }),
            )?;
            Ok(IngestBatch {
                id,
                uploaded_at,
                detections_digest: detections_digest.to_string(),
                gps_digest: gps_digest.to_string(),
                stats: stats.clone(),
            })
        })
    }

    pub fn get_batch(&self, id: i64) -> Result<IngestBatch> {
        self.conn
            .query_row(
                "SELECT id, uploaded_at, detections_digest, gps_digest, stats FROM ingest_batches WHERE id = ?1",
                [id],
                |r| {
                    let stats: String = r.get(4)?;
                    Ok(IngestBatch {
                        id: r.get(0)?,
                        uploaded_at: parse_ts(&r.get::<_, String>(1)?)?,
                        detections_digest: r.get(2)?,
                        gps_digest: r.get(3)?,
                        stats: serde_json::from_str(&stats).unwrap_or(serde_json::Value::Null),
                    })
                },
            )
            .optional()?
            .ok_or_else(|| StoreError::not_found("batch", id))
    }

    pub fn list_batches(&self) -> Result<Vec<i64>> {
        let mut stmt = self.conn.prepare("SELECT id FROM ingest_batches ORDER BY id")?;
        let ids = stmt.query_map([], |r| r.get(0))?;
        Ok(ids.collect::<rusqlite::Result<_>>()?)
    }

    pub(crate) fn thumbnail_cap(&self) -> usize {
        self.thumbnail_cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn now() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2025-08-13T10:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    #[test]
    fn migrates_fresh_and_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rw.db");
        {
            let s = Store::open(&path).unwrap();
            assert_eq!(s.schema_version().unwrap(), 1);
            s.append_audit(Actor::System, AuditAction::Login, "x", now(), json!({}))
                .unwrap();
        }
        let s = Store::open(&path).unwrap();
        assert_eq!(s.audit_log().unwrap().len(), 1);
    }

    #[test]
    fn audit_ids_increase_and_rows_are_immutable() {
        let s = Store::open_in_memory().unwrap();
        let a = s
            .append_audit(Actor::System, AuditAction::Login, "a", now(), json!({}))
            .unwrap();
        let b = s
            .append_audit(Actor::Operator, AuditAction::Login, "b", now(), json!({"k": 1}))
            .unwrap();
        assert!(b > a);
        assert!(s.conn().execute("UPDATE audit_log SET actor = 'x'", []).is_err());
        assert!(s.conn().execute("DELETE FROM audit_log", []).is_err());
        let jsonl = s.export_audit_jsonl().unwrap();
        assert_eq!(jsonl.lines().count(), 2);
        assert!(jsonl.contains("\"actor\":\"operator\""));
    }

    #[test]
    fn atomic_rolls_back_everything() {
        let s = Store::open_in_memory().unwrap();
        let r: Result<()> = s.atomic(|| {
            s.append_audit(Actor::System, AuditAction::Login, "a", now(), json!({}))?;
            s.atomic(|| s.append_audit(Actor::System, AuditAction::Login, "b", now(), json!({})))?;
            Err(StoreError::invalid("test", "boom"))
        });
        assert!(r.is_err());
        assert!(s.audit_log().unwrap().is_empty());
        // and the connection is usable afterwards
        s.append_audit(Actor::System, AuditAction::Login, "c", now(), json!({}))
            .unwrap();
        assert_eq!(s.audit_log().unwrap().len(), 1);
    }

    #[test]
    fn batch_round_trip() {
        let s = Store::open_in_memory().unwrap();
        let b = s
            .insert_batch(Actor::Account(1), now(), "aa", "bb", &json!({"frames": 3}))
            .unwrap();
        assert_eq!(s.get_batch(b.id).unwrap(), b);
        assert!(matches!(s.get_batch(99), Err(StoreError::NotFound { .. })));
        let log = s.audit_log().unwrap();
        assert_eq!(log[0].action, "ingest_batch");
        assert_eq!(log[0].actor, "account:1");
    }
}
