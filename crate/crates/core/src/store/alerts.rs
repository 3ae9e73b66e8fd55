use chrono::{DateTime, Utc};
use rusqlite::{params, OptionalExtension, Row};
use serde_json::json;

use super::{decode, fmt_ts, parse_col, parse_ts, Actor, AuditAction, Result, Store, StoreError};
use crate::governance::{AlertDraft, AlertEvent, DeliveryStatus, HealthState, Transition};
use crate::segment::SegmentId;

const COLUMNS: &str =
    "id, segment_id, transition, health, recipients, message, created_at, delivery_status, idempotency_key, attempts";

fn from_row(r: &Row<'_>) -> rusqlite::Result<AlertEvent> {
    let recipients: String = r.get(4)?;
    let status: String = r.get(7)?;
    Ok(AlertEvent {
        id: r.get(0)?,
        segment_id: r.get(1)?,
        transition: parse_col::<Transition>(&r.get::<_, String>(2)?, "transition")?,
        health: parse_col::<HealthState>(&r.get::<_, String>(3)?, "health")?,
        recipients: decode(serde_json::from_str(&recipients).ok(), &recipients, "recipients")?,
        message: r.get(5)?,
        created_at: parse_ts(&r.get::<_, String>(6)?)?,
        delivery_status: decode(DeliveryStatus::parse(&status), &status, "delivery_status")?,
        idempotency_key: r.get(8)?,
        attempts: r.get(9)?,
    })
}

impl Store {
    /// Persists a Pending alert unless a Pending or Sent event already holds
    /// the same idempotency key, in which case `None` is returned and nothing
    /// is written.
    pub fn insert_alert(&self, actor: Actor, draft: &AlertDraft) -> Result<Option<AlertEvent>> {
        self.atomic(|| {
            let dup: Option<i64> = self
                .conn()
                .query_row(
                    "SELECT id FROM alert_events WHERE idempotency_key = ?1 AND delivery_status IN ('pending','sent')",
                    [&draft.idempotency_key],
                    |r| r.get(0),
                )
                .optional()?;
            if dup.is_some() {
                return Ok(None);
            }
            self.conn().execute(
                "INSERT INTO alert_events (segment_id, transition, health, recipients, message, created_at,
                                           delivery_status, idempotency_key)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, 'pending', ?7)",
                params![
                    draft.segment_id,
                    draft.transition.to_string(),
                    draft.health.as_str(),
                    serde_json::to_string(&draft.recipients)?,
                    draft.message,
                    fmt_ts(draft.created_at),
                    draft.idempotency_key,
                ],
            )?;
            let id = self.conn().last_insert_rowid();
            self.append_audit(
                actor,
                AuditAction::AlertCreated,
                &format!("alert:{id}"),
                draft.created_at,
                json!({
                    "segment_id": draft.segment_id,
                    "transition": draft.transition,
                    "health": draft.health,
                    "recipients": draft.recipients,
                }),
            )?;
            self.get_alert(id).map(Some)
        })
    }

    /// Records the outcome of a delivery attempt run.
    pub fn record_delivery(
        &self,
        id: i64,
        status: DeliveryStatus,
        attempts: u32,
        last_error: Option<&str>,
        at: DateTime<Utc>,
    ) -> Result<AlertEvent> {
        let action = match status {
            DeliveryStatus::Sent => AuditAction::AlertSent,
            DeliveryStatus::Failed => AuditAction::AlertFailed,
            DeliveryStatus::Pending => {
                return Err(StoreError::invalid("alert", "delivery outcome cannot be pending"));
            }
        };
        self.atomic(|| {
            let n = self.conn().execute(
                "UPDATE alert_events SET delivery_status = ?1, attempts = attempts + ?2, last_error = ?3
                 WHERE id = ?4 AND delivery_status = 'pending'",
                params![status.as_str(), attempts, last_error, id],
            )?;
            if n == 0 {
                self.get_alert(id)?;
                return Err(StoreError::ConflictingWrite {
                    entity: "alert",
                    id: id.to_string(),
                });
            }
            self.append_audit(
                Actor::System,
                action,
                &format!("alert:{id}"),
                at,
                json!({"attempts": attempts, "last_error": last_error}),
            )?;
            self.get_alert(id)
        })
    }

    pub fn get_alert(&self, id: i64) -> Result<AlertEvent> {
        self.conn()
            .query_row(
                &format!("SELECT {COLUMNS} FROM alert_events WHERE id = ?1"),
                [id],
                from_row,
            )
            .optional()?
            .ok_or_else(|| StoreError::not_found("alert", id))
    }

    pub fn list_alerts(&self) -> Result<Vec<AlertEvent>> {
        let mut stmt = self
            .conn()
            .prepare(&format!("SELECT {COLUMNS} FROM alert_events ORDER BY id"))?;
        let rows = stmt.query_map([], from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Pending alerts, oldest first.
    pub fn pending_alerts(&self) -> Result<Vec<AlertEvent>> {
        let mut stmt = self.conn().prepare(&format!(
            "SELECT {COLUMNS} FROM alert_events WHERE delivery_status = 'pending' ORDER BY id"
        ))?;
        let rows = stmt.query_map([], from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// The newest `limit` alerts for a segment, newest first.
    pub fn recent_alerts(&self, segment_id: SegmentId, limit: u32) -> Result<Vec<AlertEvent>> {
        let mut stmt = self.conn().prepare(&format!(
            "SELECT {COLUMNS} FROM alert_events WHERE segment_id = ?1 ORDER BY id DESC LIMIT ?2"
        ))?;
        let rows = stmt.query_map(params![segment_id, limit], from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }
}
