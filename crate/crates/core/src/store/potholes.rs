use std::collections::HashMap;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rusqlite::{params, OptionalExtension, Row};
use serde_json::json;

use super::{decode, fmt_ts, parse_ts, Actor, AuditAction, Result, Store, StoreError};
use crate::dedupe::{NewPothole, Pothole, PotholeId, PotholeStatus};
use crate::detection::SeverityGrade;
use crate::geo::LatLon;

/// Inclusive latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        let b = Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        };
        let corners_valid =
            LatLon::new(min_lat, min_lon).is_valid() && LatLon::new(max_lat, max_lon).is_valid();
        if !corners_valid {
            return Err(StoreError::MalformedBBox(format!(
                "{b:?} has out-of-range corners"
            )));
        }
        if min_lat > max_lat || min_lon > max_lon {
            return Err(StoreError::MalformedBBox(format!("{b:?} is not well-ordered")));
        }
        Ok(b)
    }

    pub fn contains(&self, p: LatLon) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }
}

impl FromStr for BBox {
    type Err = StoreError;

    /// `min_lat,min_lon,max_lat,max_lon`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(StoreError::MalformedBBox(format!(
                "expected 4 comma-separated numbers, got {s:?}"
            )));
        }
        let mut v = [0.0; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| StoreError::MalformedBBox(format!("{part:?} is not a number")))?;
        }
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Conjunction of optional pothole filters. Dates bound `last_seen`
/// inclusively.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PotholeQuery {
    pub bbox: Option<BBox>,
    pub status: Option<PotholeStatus>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    /// Matches the free-text category of the attributed segment.
    pub category: Option<String>,
}

impl PotholeQuery {
    fn matches(&self, p: &Pothole, category_of: &HashMap<i64, Option<String>>) -> bool {
        if let Some(b) = &self.bbox {
            if !b.contains(p.position()) {
                return false;
            }
        }
        if self.status.is_some_and(|s| s != p.status) {
            return false;
        }
        if self.from.is_some_and(|f| p.last_seen < f) || self.to.is_some_and(|t| p.last_seen > t) {
            return false;
        }
        if let Some(want) = &self.category {
            let got = p
                .segment_id
                .and_then(|s| category_of.get(&s))
                .and_then(|c| c.as_deref());
            if got != Some(want.as_str()) {
                return false;
            }
        }
        true
    }
}

const COLUMNS: &str =
    "id, lat, lon, severity, status, first_seen, last_seen, detection_count, thumbnail, segment_id, version";

fn from_row(r: &Row<'_>) -> rusqlite::Result<Pothole> {
    Ok(Pothole {
        id: r.get(0)?,
        lat: r.get(1)?,
        lon: r.get(2)?,
        severity: {
            let raw: String = r.get(3)?;
            decode(SeverityGrade::parse(&raw), &raw, "severity")?
        },
        status: {
            let raw: String = r.get(4)?;
            decode(PotholeStatus::parse(&raw), &raw, "status")?
        },
        first_seen: parse_ts(&r.get::<_, String>(5)?)?,
        last_seen: parse_ts(&r.get::<_, String>(6)?)?,
        detection_count: r.get(7)?,
        thumbnail: r.get(8)?,
        segment_id: r.get(9)?,
        version: r.get(10)?,
    })
}

impl Store {
    fn check_pothole(
        &self,
        pos: LatLon,
        first: DateTime<Utc>,
        last: DateTime<Utc>,
        count: u32,
        thumb: Option<&str>,
    ) -> Result<()> {
        if !pos.is_valid() {
            return Err(StoreError::invalid("pothole", "coordinates out of range"));
        }
        if first > last {
            return Err(StoreError::invalid("pothole", "first_seen is after last_seen"));
        }
        if count == 0 {
            return Err(StoreError::invalid(
                "pothole",
                "detection_count must be at least 1",
            ));
        }
        if let Some(t) = thumb {
            if t.len() > self.thumbnail_cap() {
                return Err(StoreError::invalid(
                    "pothole",
                    format!("thumbnail is {} bytes, cap is {}", t.len(), self.thumbnail_cap()),
                ));
            }
        }
        Ok(())
    }

    pub fn insert_pothole(
        &self,
        actor: Actor,
        new: &NewPothole,
        segment_id: Option<i64>,
        at: DateTime<Utc>,
    ) -> Result<Pothole> {
        self.check_pothole(
            LatLon::new(new.lat, new.lon),
            new.first_seen,
            new.last_seen,
            new.detection_count,
            new.thumbnail.as_deref(),
        )?;
        self.atomic(|| {
            self.conn().execute(
                "INSERT INTO potholes (lat, lon, severity, status, first_seen, last_seen, detection_count, thumbnail, segment_id)
                 VALUES (?1, ?2, ?3, 'active', ?4, ?5, ?6, ?7, ?8)",
                params![
                    new.lat,
                    new.lon,
                    new.severity.as_str(),
                    fmt_ts(new.first_seen),
                    fmt_ts(new.last_seen),
                    new.detection_count,
                    new.thumbnail,
                    segment_id,
                ],
            )?;
            let id = self.conn().last_insert_rowid();
            self.append_audit(
                actor,
                AuditAction::PotholeCreated,
                &format!("pothole:{id}"),
                at,
                json!({"lat": new.lat, "lon": new.lon, "severity": new.severity, "segment_id": segment_id}),
            )?;
            self.get_pothole(id)
        })
    }

    /// Writes every mutable field of `p`. `p.version` must match the stored
    /// version; the returned pothole carries the bumped version.
    pub fn update_pothole(
        &self,
        actor: Actor,
        action: AuditAction,
        p: &Pothole,
        at: DateTime<Utc>,
    ) -> Result<Pothole> {
        self.check_pothole(
            p.position(),
            p.first_seen,
            p.last_seen,
            p.detection_count,
            p.thumbnail.as_deref(),
        )?;
        self.atomic(|| {
            let n = self.conn().execute(
                "UPDATE potholes SET lat = ?1, lon = ?2, severity = ?3, status = ?4, first_seen = ?5, last_seen = ?6,
                        detection_count = ?7, thumbnail = ?8, segment_id = ?9, version = version + 1
                 WHERE id = ?10 AND version = ?11",
                params![
                    p.lat,
                    p.lon,
                    p.severity.as_str(),
                    p.status.as_str(),
                    fmt_ts(p.first_seen),
                    fmt_ts(p.last_seen),
                    p.detection_count,
                    p.thumbnail,
                    p.segment_id,
                    p.id,
                    p.version,
                ],
            )?;
            if n == 0 {
                self.get_pothole(p.id)?;
                return Err(StoreError::ConflictingWrite {
                    entity: "pothole",
                    id: p.id.to_string(),
                });
            }
            self.append_audit(
                actor,
                action,
                &format!("pothole:{}", p.id),
                at,
                json!({
                    "status": p.status,
                    "detection_count": p.detection_count,
                    "last_seen": fmt_ts(p.last_seen),
                    "segment_id": p.segment_id,
                }),
            )?;
            self.get_pothole(p.id)
        })
    }

    /// Inserts or replaces a pothole with every persisted field taken
    /// verbatim, id and version included.
    pub fn import_pothole(&self, actor: Actor, p: &Pothole, at: DateTime<Utc>) -> Result<()> {
        self.check_pothole(
            p.position(),
            p.first_seen,
            p.last_seen,
            p.detection_count,
            p.thumbnail.as_deref(),
        )?;
        self.atomic(|| {
            self.conn().execute(
                &format!("INSERT OR REPLACE INTO potholes ({COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)"),
                params![
                    p.id,
                    p.lat,
                    p.lon,
                    p.severity.as_str(),
                    p.status.as_str(),
                    fmt_ts(p.first_seen),
                    fmt_ts(p.last_seen),
                    p.detection_count,
                    p.thumbnail,
                    p.segment_id,
                    p.version,
                ],
            )?;
            self.append_audit(actor, AuditAction::PotholeImported, &format!("pothole:{}", p.id), at, json!({}))?;
            Ok(())
        })
    }

    pub fn get_pothole(&self, id: PotholeId) -> Result<Pothole> {
        self.conn()
            .query_row(
                &format!("SELECT {COLUMNS} FROM potholes WHERE id = ?1"),
                [id],
                from_row,
            )
            .optional()?
            .ok_or_else(|| StoreError::not_found("pothole", id))
    }

    /// All potholes ordered by id.
    pub fn list_potholes(&self) -> Result<Vec<Pothole>> {
        let mut stmt = self
            .conn()
            .prepare(&format!("SELECT {COLUMNS} FROM potholes ORDER BY id"))?;
        let rows = stmt.query_map([], from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn potholes_on_segment(&self, segment_id: i64) -> Result<Vec<Pothole>> {
        let mut stmt = self.conn().prepare(&format!(
            "SELECT {COLUMNS} FROM potholes WHERE segment_id = ?1 ORDER BY id"
        ))?;
        let rows = stmt.query_map([segment_id], from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Potholes satisfying every filter in `q`, ordered by id.
    pub fn query_potholes(&self, q: &PotholeQuery) -> Result<Vec<Pothole>> {
        let categories: HashMap<i64, Option<String>> = if q.category.is_some() {
            let mut stmt = self.conn().prepare("SELECT id, category FROM segments")?;
            let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?;
            rows.collect::<rusqlite::Result<_>>()?
        } else {
            HashMap::new()
        };
        Ok(self
            .list_potholes()?
            .into_iter()
            .filter(|p| q.matches(p, &categories))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn new_pothole(lat: f64, lon: f64, last_seen: &str) -> NewPothole {
        NewPothole {
            lat,
            lon,
            severity: SeverityGrade::Moderate,
            first_seen: at("2025-01-01T00:00:00Z"),
            last_seen: at(last_seen),
            detection_count: 1,
            thumbnail: Some("aGVsbG8gcG90aG9sZQ==".into()),
        }
    }

    #[test]
    fn create_then_get_round_trips_thumbnail() {
        let s = Store::open_in_memory().unwrap();
        let p = s
            .insert_pothole(
                Actor::System,
                &new_pothole(20.1, 85.2, "2025-01-02T00:00:00Z"),
                None,
                at("2025-01-02T00:00:00Z"),
            )
            .unwrap();
        let got = s.get_pothole(p.id).unwrap();
        assert_eq!(got, p);
        assert_eq!(got.thumbnail.as_deref(), Some("aGVsbG8gcG90aG9sZQ=="));
        assert_eq!(got.version, 1);
    }

    #[test]
    fn stale_version_conflicts() {
        let s = Store::open_in_memory().unwrap();
        let now = at("2025-01-02T00:00:00Z");
        let p = s
            .insert_pothole(
                Actor::System,
                &new_pothole(20.1, 85.2, "2025-01-02T00:00:00Z"),
                None,
                now,
            )
            .unwrap();
        let mut a = p.clone();
        a.detection_count = 2;
        let a = s
            .update_pothole(Actor::System, AuditAction::PotholeUpdated, &a, now)
            .unwrap();
        assert_eq!(a.version, 2);
        let mut stale = p;
        stale.detection_count = 5;
        assert!(matches!(
            s.update_pothole(Actor::System, AuditAction::PotholeUpdated, &stale, now),
            Err(StoreError::ConflictingWrite { .. })
        ));
        let mut missing = a;
        missing.id = 999;
        assert!(matches!(
            s.update_pothole(Actor::System, AuditAction::PotholeUpdated, &missing, now),
            Err(StoreError::NotFound { .. })
        ));
    }

    #[test]
    fn oversized_thumbnail_rejected() {
        let s = Store::open_in_memory().unwrap().with_thumbnail_cap(8);
        let r = s.insert_pothole(
            Actor::System,
            &new_pothole(20.1, 85.2, "2025-01-02T00:00:00Z"),
            None,
            Utc::now(),
        );
        assert!(matches!(r, Err(StoreError::Invalid { .. })));
        assert!(s.audit_log().unwrap().is_empty());
    }

    #[test]
    fn query_filters() {
        let s = Store::open_in_memory().unwrap();
        let now = at("2025-02-01T00:00:00Z");
        let inside = s
            .insert_pothole(
                Actor::System,
                &new_pothole(20.1, 85.2, "2025-01-10T00:00:00Z"),
                None,
                now,
            )
            .unwrap();
        s.insert_pothole(
            Actor::System,
            &new_pothole(21.5, 86.0, "2025-01-20T00:00:00Z"),
            None,
            now,
        )
        .unwrap();

        let bbox: BBox = "20.0,85.0,20.5,85.5".parse().unwrap();
        let q = PotholeQuery {
            bbox: Some(bbox),
            ..Default::default()
        };
        assert_eq!(s.query_potholes(&q).unwrap(), vec![inside]);

        let q = PotholeQuery {
            status: Some(PotholeStatus::Repaired),
            ..Default::default()
        };
        assert!(s.query_potholes(&q).unwrap().is_empty());

        let q = PotholeQuery {
            from: Some(at("2025-01-21T00:00:00Z")),
            to: Some(at("2025-01-31T00:00:00Z")),
            ..Default::default()
        };
        assert!(s.query_potholes(&q).unwrap().is_empty());
    }

    #[test]
    fn bbox_parsing() {
        assert!("20,85,21,86".parse::<BBox>().is_ok());
        for bad in [
            "21,85,20,86",
            "20,86,21,85",
            "1,2,3",
            "a,b,c,d",
            "95,0,96,1",
            "NaN,0,1,1",
        ] {
            assert!(
                matches!(bad.parse::<BBox>(), Err(StoreError::MalformedBBox(_))),
                "{bad}"
            );
        }
    }
}
