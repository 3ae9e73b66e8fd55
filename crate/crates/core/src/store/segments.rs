use chrono::{DateTime, NaiveDate, Utc};
use rusqlite::{params, OptionalExtension, Row};
use serde_json::json;

use super::{parse_col, Actor, AuditAction, Result, Store, StoreError};
use crate::governance::HealthState;
use crate::segment::{polyline_length_m, ContractMetadata, Polyline, RoadSegment, SegmentId};

const COLUMNS: &str =
    "id, geometry, contractor_name, contractor_contact, construction_date, budget, warranty_end, \
                       category, health, length_m, created_by, version";

fn from_row(r: &Row<'_>) -> rusqlite::Result<RoadSegment> {
    let geometry: String = r.get(1)?;
    let geometry: Polyline = serde_json::from_str(&geometry).map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(1, rusqlite::types::Type::Text, Box::new(e))
    })?;
    Ok(RoadSegment {
        id: r.get(0)?,
        geometry,
        contract: ContractMetadata {
            contractor_name: r.get(2)?,
            contractor_contact: r.get(3)?,
            construction_date: parse_col::<NaiveDate>(&r.get::<_, String>(4)?, "construction_date")?,
            budget: r.get(5)?,
            warranty_end: parse_col::<NaiveDate>(&r.get::<_, String>(6)?, "warranty_end")?,
            category: r.get(7)?,
        },
        health: parse_col::<HealthState>(&r.get::<_, String>(8)?, "health")?,
        length_m: r.get(9)?,
        created_by: r.get(10)?,
        version: r.get(11)?,
    })
}

fn check_segment(s: &RoadSegment) -> Result<()> {
    s.contract
        .validate()
        .map_err(|e| StoreError::invalid("segment", e))?;
    let expected = polyline_length_m(&s.geometry);
    if (s.length_m - expected).abs() > 1e-6 * expected.max(1.0) {
        return Err(StoreError::invalid(
            "segment",
            format!(
                "length_m {} does not match geometry length {expected}",
                s.length_m
            ),
        ));
    }
    Ok(())
}

fn contract_detail(s: &RoadSegment) -> serde_json::Value {
    json!({
        "contractor_name": s.contract.contractor_name,
        "construction_date": s.contract.construction_date,
        "budget": s.contract.budget,
        "warranty_end": s.contract.warranty_end,
        "category": s.contract.category,
        "vertices": s.geometry.vertices().len(),
        "length_m": s.length_m,
        "health": s.health,
    })
}

impl Store {
    /// Persists a new segment; `seg.id` and `seg.version` are ignored.
    pub fn insert_segment(&self, actor: Actor, seg: &RoadSegment, at: DateTime<Utc>) -> Result<RoadSegment> {
        check_segment(seg)?;
        self.atomic(|| {
            self.conn().execute(
                "INSERT INTO segments (geometry, contractor_name, contractor_contact, construction_date, budget,
                                       warranty_end, category, health, length_m, created_by)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
                params![
                    serde_json::to_string(&seg.geometry)?,
                    seg.contract.contractor_name,
                    seg.contract.contractor_contact,
                    seg.contract.construction_date.to_string(),
                    seg.contract.budget,
                    seg.contract.warranty_end.to_string(),
                    seg.contract.category,
                    seg.health.as_str(),
                    seg.length_m,
                    seg.created_by,
                ],
            )?;
            let id = self.conn().last_insert_rowid();
            self.append_audit(actor, AuditAction::SegmentCreated, &format!("segment:{id}"), at, contract_detail(seg))?;
            self.get_segment(id)
        })
    }

    /// Writes geometry, contract and health. `seg.version` must match the
    /// stored version.
    pub fn update_segment(
        &self,
        actor: Actor,
        action: AuditAction,
        seg: &RoadSegment,
        at: DateTime<Utc>,
    ) -> Result<RoadSegment> {
        check_segment(seg)?;
        self.atomic(|| {
            let n = self.conn().execute(
                "UPDATE segments SET geometry = ?1, contractor_name = ?2, contractor_contact = ?3,
                        construction_date = ?4, budget = ?5, warranty_end = ?6, category = ?7, health = ?8,
                        length_m = ?9, version = version + 1
                 WHERE id = ?10 AND version = ?11",
                params![
                    serde_json::to_string(&seg.geometry)?,
                    seg.contract.contractor_name,
                    seg.contract.contractor_contact,
                    seg.contract.construction_date.to_string(),
                    seg.contract.budget,
                    seg.contract.warranty_end.to_string(),
                    seg.contract.category,
                    seg.health.as_str(),
                    seg.length_m,
                    seg.id,
                    seg.version,
                ],
            )?;
            if n == 0 {
                self.get_segment(seg.id)?;
                return Err(StoreError::ConflictingWrite {
                    entity: "segment",
                    id: seg.id.to_string(),
                });
            }
            self.append_audit(
                actor,
                action,
                &format!("segment:{}", seg.id),
                at,
                contract_detail(seg),
            )?;
            self.get_segment(seg.id)
        })
    }

    /// Removes the segment and detaches its potholes in the same savepoint.
    /// Returns the ids of the detached potholes.
    pub fn delete_segment(&self, actor: Actor, id: SegmentId, at: DateTime<Utc>) -> Result<Vec<i64>> {
        self.atomic(|| {
            self.get_segment(id)?;
            let detached: Vec<i64> = {
                let mut stmt = self
                    .conn()
                    .prepare("SELECT id FROM potholes WHERE segment_id = ?1 ORDER BY id")?;
                let rows = stmt.query_map([id], |r| r.get(0))?;
                rows.collect::<rusqlite::Result<_>>()?
            };
            self.conn().execute(
                "UPDATE potholes SET segment_id = NULL, version = version + 1 WHERE segment_id = ?1",
                [id],
            )?;
            self.conn().execute("DELETE FROM segments WHERE id = ?1", [id])?;
            self.append_audit(
                actor,
                AuditAction::SegmentDeleted,
                &format!("segment:{id}"),
                at,
                json!({ "detached_potholes": detached }),
            )?;
            Ok(detached)
        })
    }

    /// Inserts or replaces a segment with every persisted field taken
    /// verbatim, id and version included.
    pub fn import_segment(&self, actor: Actor, seg: &RoadSegment, at: DateTime<Utc>) -> Result<()> {
        check_segment(seg)?;
        self.atomic(|| {
            // REPLACE would delete the row first and fire ON DELETE SET NULL
            let exists: Option<i64> = self
                .conn()
                .query_row("SELECT id FROM segments WHERE id = ?1", [seg.id], |r| r.get(0))
                .optional()?;
            let sql = if exists.is_some() {
                "UPDATE segments SET geometry = ?2, contractor_name = ?3, contractor_contact = ?4, construction_date = ?5,
                        budget = ?6, warranty_end = ?7, category = ?8, health = ?9, length_m = ?10, created_by = ?11,
                        version = ?12
                 WHERE id = ?1"
                    .to_string()
            } else {
                format!("INSERT INTO segments ({COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12)")
            };
            self.conn().execute(
                &sql,
                params![
                    seg.id,
                    serde_json::to_string(&seg.geometry)?,
                    seg.contract.contractor_name,
                    seg.contract.contractor_contact,
                    seg.contract.construction_date.to_string(),
                    seg.contract.budget,
                    seg.contract.warranty_end.to_string(),
                    seg.contract.category,
                    seg.health.as_str(),
                    seg.length_m,
                    seg.created_by,
                    seg.version,
                ],
            )?;
            self.append_audit(actor, AuditAction::SegmentImported, &format!("segment:{}", seg.id), at, json!({}))?;
            Ok(())
        })
    }

    pub fn get_segment(&self, id: SegmentId) -> Result<RoadSegment> {
        self.conn()
            .query_row(
                &format!("SELECT {COLUMNS} FROM segments WHERE id = ?1"),
                [id],
                from_row,
            )
            .optional()?
            .ok_or_else(|| StoreError::not_found("segment", id))
    }

    /// All segments ordered by id.
    pub fn list_segments(&self) -> Result<Vec<RoadSegment>> {
        let mut stmt = self
            .conn()
            .prepare(&format!("SELECT {COLUMNS} FROM segments ORDER BY id"))?;
        let rows = stmt.query_map([], from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Active pothole count attributed to `id`.
    pub fn active_count(&self, id: SegmentId) -> Result<u32> {
        Ok(self.conn().query_row(
            "SELECT COUNT(*) FROM potholes WHERE segment_id = ?1 AND status = 'active'",
            [id],
            |r| r.get(0),
        )?)
    }

    pub fn repaired_count(&self, id: SegmentId) -> Result<u32> {
        Ok(self.conn().query_row(
            "SELECT COUNT(*) FROM potholes WHERE segment_id = ?1 AND status = 'repaired'",
            [id],
            |r| r.get(0),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedupe::NewPothole;
    use crate::detection::SeverityGrade;
    use crate::geo::LatLon;

    fn now() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2025-03-01T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    pub(crate) fn sample_segment() -> RoadSegment {
        let geometry = Polyline::new(vec![LatLon::new(20.1, 85.2), LatLon::new(20.101, 85.2)]).unwrap();
        RoadSegment {
            id: 0,
            length_m: polyline_length_m(&geometry),
            geometry,
            contract: ContractMetadata {
                contractor_name: "Kalinga Infra".into(),
                contractor_contact: "ops@kalinga.example".into(),
                construction_date: "2024-01-10".parse().unwrap(),
                budget: 2_500_000.0,
                warranty_end: "2026-01-10".parse().unwrap(),
                category: Some("urban".into()),
            },
            health: HealthState::Green,
            created_by: "account:1".into(),
            version: 0,
        }
    }

    #[test]
    fn insert_get_update() {
        let s = Store::open_in_memory().unwrap();
        let seg = s
            .insert_segment(Actor::Account(1), &sample_segment(), now())
            .unwrap();
        assert_eq!(seg.version, 1);
        assert_eq!(s.get_segment(seg.id).unwrap(), seg);
        let mut edit = seg.clone();
        edit.health = HealthState::Yellow;
        let edited = s
            .update_segment(Actor::System, AuditAction::HealthChanged, &edit, now())
            .unwrap();
        assert_eq!(edited.health, HealthState::Yellow);
        assert!(matches!(
            s.update_segment(Actor::System, AuditAction::HealthChanged, &edit, now()),
            Err(StoreError::ConflictingWrite { .. })
        ));
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = Store::open_in_memory().unwrap();
        let mut seg = sample_segment();
        seg.length_m += 5.0;
        assert!(matches!(
            s.insert_segment(Actor::System, &seg, now()),
            Err(StoreError::Invalid { .. })
        ));
    }

    #[test]
    fn delete_detaches_potholes_atomically() {
        let s = Store::open_in_memory().unwrap();
        let seg = s
            .insert_segment(Actor::Account(1), &sample_segment(), now())
            .unwrap();
        let p = s
            .insert_pothole(
                Actor::System,
                &NewPothole {
                    lat: 20.1005,
                    lon: 85.2,
                    severity: SeverityGrade::Minor,
                    first_seen: now(),
                    last_seen: now(),
                    detection_count: 1,
                    thumbnail: None,
                },
                Some(seg.id),
                now(),
            )
            .unwrap();
        assert_eq!(s.active_count(seg.id).unwrap(), 1);
        assert_eq!(
            s.delete_segment(Actor::Account(1), seg.id, now()).unwrap(),
            vec![p.id]
        );
        assert_eq!(s.get_pothole(p.id).unwrap().segment_id, None);
        assert!(matches!(s.get_segment(seg.id), Err(StoreError::NotFound { .. })));
        assert!(matches!(
            s.delete_segment(Actor::Account(1), seg.id, now()),
            Err(StoreError::NotFound { .. })
        ));
    }

    #[test]
    fn import_keeps_id_and_version() {
        let s = Store::open_in_memory().unwrap();
        let mut seg = sample_segment();
        seg.id = 17;
        seg.version = 4;
        s.import_segment(Actor::Operator, &seg, now()).unwrap();
        assert_eq!(s.get_segment(17).unwrap(), seg);
    }
}
