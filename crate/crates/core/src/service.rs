//! The operations exposed by the CLI and the HTTP API, each one a single
//! store transaction followed by alert delivery.

use std::collections::BTreeSet;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::auth;
use crate::config::{Config, ConfigError};
use crate::dedupe::{cluster, merge_into_registry, PotholeStatus, RegistryMutation};
use crate::detection::{geotag_batch, parse_detections_jsonl, DetectionsParseError, GeotagStats};
use crate::geo::LatLon;
use crate::geojson::{export_geojson, import_geojson, GeoJsonError, Visibility};
use crate::governance::{
    density_per_km, reevaluate, verify_repairs, warranty_active, AlertDraft, AlertEvent, DeliveryStatus,
    HealthState, Transition, Traversal, WebhookPayload, WebhookSink,
};
use crate::gps::{parse_gps_log, GpsError};
use crate::segment::{
    attribute_pothole, polyline_length_m, ContractError, ContractMetadata, GeometryError, OsrmClient,
    Polyline, RoadSegment, RouteProvider, RoutingError, SegmentId,
};
use crate::store::{Account, Actor, AuditAction, Role, Store, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Detections(#[from] DetectionsParseError),
    #[error("GPS log: {0}")]
    Gps(#[from] GpsError),
    #[error("invalid contract: {0}")]
    InvalidContract(#[from] ContractError),
    #[error("invalid geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    GeoJson(#[from] GeoJsonError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("segment {0} has zero length")]
    ZeroLengthSegment(SegmentId),
    #[error("invalid username or password")]
    BadCredentials,
    #[error("{0}")]
    InvalidInput(String),
}

impl ServiceError {
    /// Whether the caller (rather than the system) is at fault.
    pub fn is_user_error(&self) -> bool {
        match self {
            Self::Store(e) => matches!(
                e,
                StoreError::NotFound { .. }
                    | StoreError::ConflictingWrite { .. }
                    | StoreError::MalformedBBox(_)
                    | StoreError::Invalid { .. }
            ),
            Self::Routing(_) => false,
            _ => true,
        }
    }

    /// Stable machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Store(StoreError::NotFound { .. }) => "not_found",
            Self::Store(StoreError::ConflictingWrite { .. }) => "conflicting_write",
            Self::Store(StoreError::MalformedBBox(_)) => "malformed_bbox",
            Self::Store(StoreError::Invalid { .. }) => "invalid_entity",
            Self::Store(_) => "store",
            Self::Detections(_) => "invalid_detections",
            Self::Gps(_) => "invalid_gps",
            Self::InvalidContract(_) => "invalid_contract",
            Self::Geometry(_) => "invalid_geometry",
            Self::Routing(RoutingError::ProviderUnreachable(_)) => "provider_unreachable",
            Self::Routing(RoutingError::NoRoute(_)) => "no_route",
            Self::Routing(RoutingError::NotConfigured) => "routing_not_configured",
            Self::GeoJson(_) => "invalid_geojson",
            Self::Config(_) => "invalid_config",
            Self::ZeroLengthSegment(_) => "zero_length_segment",
            Self::BadCredentials => "bad_credentials",
            Self::InvalidInput(_) => "invalid_input",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryCounts {
    pub clusters: u64,
    pub potholes_created: u64,
    pub potholes_merged: u64,
    pub potholes_reopened: u64,
    pub potholes_repaired: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub batch_id: i64,
    #[serde(flatten)]
    pub geotag: GeotagStats,
    #[serde(flatten)]
    pub registry: RegistryCounts,
    pub segments_changed: u64,
    pub alerts_created: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteMode {
    #[default]
    Routed,
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub start: LatLon,
    pub end: LatLon,
    #[serde(default)]
    pub mode: RouteMode,
    /// Use a straight line when routing fails.
    #[serde(default)]
    pub fallback: bool,
    pub contract: ContractMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEdit {
    pub start: Option<LatLon>,
    pub end: Option<LatLon>,
    #[serde(default)]
    pub mode: RouteMode,
    #[serde(default)]
    pub fallback: bool,
    pub contract: Option<ContractMetadata>,
    /// Expected current version; a mismatch is a conflicting write.
    pub version: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub segments_evaluated: u64,
    pub segments_changed: u64,
    pub alerts_created: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarrantyStatus {
    Active,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportContract {
    pub contractor_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contractor_contact: Option<String>,
    pub construction_date: NaiveDate,
    pub budget: f64,
    pub warranty_end: NaiveDate,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEvent {
    pub id: i64,
    pub transition: Transition,
    pub health: HealthState,
    pub created_at: DateTime<Utc>,
    pub delivery_status: DeliveryStatus,
    pub attempts: u32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recipients: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub segment_id: SegmentId,
    pub health: HealthState,
    pub density_per_km: f64,
    pub active_potholes: u32,
    pub repaired_potholes: u32,
    pub length_m: f64,
    pub warranty_status: WarrantyStatus,
    /// Negative once the warranty has lapsed.
    pub days_to_deadline: i64,
    pub contract: ReportContract,
    pub recent_events: Vec<ReportEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub token: String,
    pub expires_at: DateTime<Utc>,
    #[serde(skip)]
    pub account: Account,
}

pub const MIN_PASSWORD_LEN: usize = 8;

pub struct Service {
    store: Store,
    config: Config,
    router: Option<Box<dyn RouteProvider>>,
    sink: Option<WebhookSink>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("store", &self.store)
            .field("routing", &self.router.is_some())
            .field("webhook", &self.sink.as_ref().map(WebhookSink::url))
            .finish()
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Service {
    /// Opens the configured store and wires the configured routing provider
    /// and webhook sink.
    pub fn open(config: Config) -> Result<Self> {
        config.validate()?;
        let store = Store::open(&config.store_path)?;
        Ok(Self::from_config(store, config))
    }

    /// Uses `store` as is; routing and webhook come from `config`.
    pub fn from_config(store: Store, config: Config) -> Self {
        let router = config
            .osrm_url
            .as_ref()
            .map(|u| Box::new(OsrmClient::new(u.clone())) as Box<dyn RouteProvider>);
        let sink = config.webhook_url.as_ref().map(|u| {
            WebhookSink::new(u.clone(), config.webhook_token.clone())
                .with_retry(config.webhook_max_attempts, config.webhook_backoff)
        });
        let store = store.with_thumbnail_cap(config.detection.thumbnail_cap_bytes);
        Self {
            store,
            config,
            router,
            sink,
        }
    }

    pub fn with_router(mut self, router: Box<dyn RouteProvider>) -> Self {
        self.router = Some(router);
        self
    }

    pub fn with_sink(mut self, sink: WebhookSink) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Runs the full pipeline on one upload: geotag, cluster, merge into the
    /// registry, attribute, verify repairs against the traversal, re-evaluate
    /// the touched segments and queue alerts. All writes land atomically;
    /// queued alerts are delivered afterwards.
    pub fn ingest(
        &self,
        detections: &str,
        gps: &[u8],
        actor: Actor,
        now: DateTime<Utc>,
    ) -> Result<IngestReport> {
        let records = parse_detections_jsonl(detections)?;
        let track = parse_gps_log(gps)?;
        let (observations, geotag) =
            geotag_batch(&records, &track, self.config.clock_offset, &self.config.detection);
        let thr = self.config.dedup_threshold_m;
        let clusters = cluster(&observations, thr);

        let report = self.store.atomic(|| -> Result<IngestReport> {
            let existing = self.store.list_potholes()?;
            let segments = self.store.list_segments()?;
            let mutations = merge_into_registry(&clusters, &existing, thr);

            let touched: BTreeSet<i64> = mutations
                .iter()
                .filter_map(|m| match m {
                    RegistryMutation::Merged(p) | RegistryMutation::Reopened(p) => Some(p.id),
                    RegistryMutation::Created(_) => None,
                })
                .collect();
            let candidates: Vec<_> = existing
                .iter()
                .filter(|p| p.status == PotholeStatus::Active && !touched.contains(&p.id))
                .cloned()
                .collect();

            let mut counts = RegistryCounts {
                clusters: clusters.len() as u64,
                ..Default::default()
            };
            for m in &mutations {
                match m {
                    RegistryMutation::Merged(_) => counts.potholes_merged += 1,
                    RegistryMutation::Reopened(_) => counts.potholes_reopened += 1,
                    RegistryMutation::Created(_) => counts.potholes_created += 1,
                }
            }

            // the batch record precedes everything it causes in the audit trail
            let stats = serde_json::json!({ "geotag": geotag, "registry": counts });
            let batch = self.store.insert_batch(
                actor,
                now,
                &hex_sha256(detections.as_bytes()),
                &hex_sha256(gps),
                &stats,
            )?;
            let repaired = verify_repairs(
                &Traversal {
                    track: &track,
                    batch_id: batch.id,
                },
                &observations,
                &candidates,
                thr,
                &self.config.detection.locate,
                &self.config.governance,
            );

            let radius = self.config.attribution_radius_m;
            let attribute = |p: LatLon| attribute_pothole(p, &segments, radius).map(|(id, _)| id);
            let mut affected = BTreeSet::new();
            for m in mutations {
                let (mut p, action) = match m {
                    RegistryMutation::Created(np) => {
                        let seg = attribute(LatLon::new(np.lat, np.lon));
                        affected.extend(seg);
                        self.store.insert_pothole(Actor::System, &np, seg, now)?;
                        continue;
                    }
                    RegistryMutation::Merged(p) => (p, AuditAction::PotholeUpdated),
                    RegistryMutation::Reopened(p) => (p, AuditAction::PotholeReopened),
                };
                affected.extend(p.segment_id);
                p.segment_id = attribute(p.position());
                affected.extend(p.segment_id);
                self.store.update_pothole(Actor::System, action, &p, now)?;
            }
            counts.potholes_repaired = repaired.len() as u64;
            for id in repaired {
                let mut p = self.store.get_pothole(id)?;
                p.status = PotholeStatus::Repaired;
                affected.extend(p.segment_id);
                self.store
                    .update_pothole(Actor::System, AuditAction::PotholeRepaired, &p, now)?;
            }

            let (segments_changed, alerts_created) = self.reevaluate_segments(affected, now)?;
            Ok(IngestReport {
                batch_id: batch.id,
                geotag: geotag.clone(),
                registry: counts,
                segments_changed,
                alerts_created,
            })
        })?;
        self.dispatch_pending(now)?;
        Ok(report)
    }

    /// Re-evaluates each listed segment that still exists, persisting health
    /// changes and the alerts they call for. Returns (changed, alerts).
    fn reevaluate_segments(
        &self,
        ids: impl IntoIterator<Item = SegmentId>,
        now: DateTime<Utc>,
    ) -> Result<(u64, u64)> {
        let ids: BTreeSet<SegmentId> = ids.into_iter().collect();
        let (mut changed, mut alerts) = (0, 0);
        for id in ids {
            let seg = match self.store.get_segment(id) {
                Ok(s) => s,
                Err(StoreError::NotFound { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let active = self.store.active_count(id)?;
            let (health, draft) = reevaluate(&seg, active, now, &self.config.governance)
                .map_err(|_| ServiceError::ZeroLengthSegment(id))?;
            if health != seg.health {
                let mut next = seg.clone();
                next.health = health;
                self.store
                    .update_segment(Actor::System, AuditAction::HealthChanged, &next, now)?;
                changed += 1;
            }
            if let Some(d) = draft {
                if self.store.insert_alert(Actor::System, &d)?.is_some() {
                    alerts += 1;
                }
            }
        }
        Ok((changed, alerts))
    }

    /// Recomputes every pothole's segment. Returns the segments whose
    /// membership changed.
    fn reattribute_all(&self, now: DateTime<Utc>) -> Result<BTreeSet<SegmentId>> {
        let segments = self.store.list_segments()?;
        let mut affected = BTreeSet::new();
        for mut p in self.store.list_potholes()? {
            let seg = attribute_pothole(p.position(), &segments, self.config.attribution_radius_m)
                .map(|(id, _)| id);
            if seg != p.segment_id {
                affected.extend(p.segment_id);
                affected.extend(seg);
                p.segment_id = seg;
                self.store
                    .update_pothole(Actor::System, AuditAction::PotholeAttributed, &p, now)?;
            }
        }
        Ok(affected)
    }

    fn geometry(&self, start: LatLon, end: LatLon, mode: RouteMode, fallback: bool) -> Result<Polyline> {
        if !start.is_valid() || !end.is_valid() {
            return Err(ServiceError::InvalidInput(
                "segment endpoints must be valid coordinates".into(),
            ));
        }
        if start == end {
            return Err(ServiceError::InvalidInput(
                "segment start and end must differ".into(),
            ));
        }
        if mode == RouteMode::Straight {
            return Ok(Polyline::straight(start, end)?);
        }
        let routed = match &self.router {
            Some(r) => r.route(start, end),
            None => Err(RoutingError::NotConfigured),
        };
        match routed {
            Ok(p) => Ok(p),
            Err(e) if fallback => {
                tracing::info!(error = %e, "routing failed; using a straight segment");
                Ok(Polyline::straight(start, end)?)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// The geometry `create_segment` would persist for `req`, without
    /// writing anything. Contract fields are not checked.
    pub fn preview_segment(&self, req: &SegmentRequest) -> Result<Polyline> {
        self.geometry(req.start, req.end, req.mode, req.fallback)
    }

    pub fn create_segment(
        &self,
        req: &SegmentRequest,
        actor: Actor,
        now: DateTime<Utc>,
    ) -> Result<RoadSegment> {
        req.contract.validate()?;
        let geometry = self.geometry(req.start, req.end, req.mode, req.fallback)?;
        let draft = RoadSegment {
            id: 0,
            length_m: polyline_length_m(&geometry),
            geometry,
            contract: req.contract.clone(),
            health: HealthState::Green,
            created_by: actor.to_string(),
            version: 0,
        };
        let id = self.store.atomic(|| -> Result<SegmentId> {
            let seg = self.store.insert_segment(actor, &draft, now)?;
            let mut affected = self.reattribute_all(now)?;
            affected.insert(seg.id);
            self.reevaluate_segments(affected, now)?;
            Ok(seg.id)
        })?;
        self.dispatch_pending(now)?;
        Ok(self.store.get_segment(id)?)
    }

    pub fn edit_segment(
        &self,
        id: SegmentId,
        edit: &SegmentEdit,
        actor: Actor,
        now: DateTime<Utc>,
    ) -> Result<RoadSegment> {
        let current = self.store.get_segment(id)?;
        if let Some(v) = edit.version {
            if v != current.version {
                return Err(StoreError::ConflictingWrite {
                    entity: "segment",
                    id: id.to_string(),
                }
                .into());
            }
        }
        let mut next = current.clone();
        if let Some(c) = &edit.contract {
            c.validate()?;
            next.contract = c.clone();
        }
        if edit.start.is_some() || edit.end.is_some() {
            let start = edit.start.unwrap_or(current.geometry.start());
            let end = edit.end.unwrap_or(current.geometry.end());
            next.geometry = self.geometry(start, end, edit.mode, edit.fallback)?;
            next.length_m = polyline_length_m(&next.geometry);
        }
        self.store.atomic(|| -> Result<()> {
            self.store
                .update_segment(actor, AuditAction::SegmentUpdated, &next, now)?;
            let mut affected = self.reattribute_all(now)?;
            affected.insert(id);
            self.reevaluate_segments(affected, now)?;
            Ok(())
        })?;
        self.dispatch_pending(now)?;
        Ok(self.store.get_segment(id)?)
    }

    /// Deletes the segment; its potholes are re-attributed to whatever other
    /// segment now lies nearest, if any.
    pub fn delete_segment(&self, id: SegmentId, actor: Actor, now: DateTime<Utc>) -> Result<Vec<i64>> {
        let detached = self.store.atomic(|| -> Result<Vec<i64>> {
            let detached = self.store.delete_segment(actor, id, now)?;
            let affected = self.reattribute_all(now)?;
            self.reevaluate_segments(affected, now)?;
            Ok(detached)
        })?;
        self.dispatch_pending(now)?;
        Ok(detached)
    }

    /// One periodic evaluation pass over every segment; catches warranty
    /// deadlines that pass without new detections.
    pub fn tick(&self, now: DateTime<Utc>) -> Result<TickReport> {
        let report = self.store.atomic(|| -> Result<TickReport> {
            let ids: Vec<SegmentId> = self.store.list_segments()?.iter().map(|s| s.id).collect();
            let (segments_changed, alerts_created) = self.reevaluate_segments(ids.iter().copied(), now)?;
            Ok(TickReport {
                segments_evaluated: ids.len() as u64,
                segments_changed,
                alerts_created,
            })
        })?;
        self.dispatch_pending(now)?;
        Ok(report)
    }

    pub fn report(&self, id: SegmentId, now: DateTime<Utc>, include_contact: bool) -> Result<HealthReport> {
        let seg = self.store.get_segment(id)?;
        let active = self.store.active_count(id)?;
        let repaired = self.store.repaired_count(id)?;
        let density =
            density_per_km(active, seg.length_m).map_err(|_| ServiceError::ZeroLengthSegment(id))?;
        let events = self
            .store
            .recent_alerts(id, self.config.report_events)?
            .into_iter()
            .map(|e| ReportEvent {
                id: e.id,
                transition: e.transition,
                health: e.health,
                created_at: e.created_at,
                delivery_status: e.delivery_status,
                attempts: e.attempts,
                message: e.message,
                recipients: include_contact.then_some(e.recipients),
            })
            .collect();
        Ok(HealthReport {
            segment_id: id,
            health: seg.health,
            density_per_km: density,
            active_potholes: active,
            repaired_potholes: repaired,
            length_m: seg.length_m,
            warranty_status: if warranty_active(seg.contract.warranty_end, now) {
                WarrantyStatus::Active
            } else {
                WarrantyStatus::Expired
            },
            days_to_deadline: (seg.contract.warranty_end - now.date_naive()).num_days(),
            contract: ReportContract {
                contractor_name: seg.contract.contractor_name,
                contractor_contact: include_contact.then_some(seg.contract.contractor_contact),
                construction_date: seg.contract.construction_date,
                budget: seg.contract.budget,
                warranty_end: seg.contract.warranty_end,
                category: seg.contract.category,
            },
            recent_events: events,
        })
    }

    /// Queues a manual alert for the segment's contractor and the authority,
    /// then attempts delivery.
    pub fn notify(
        &self,
        id: SegmentId,
        message: Option<&str>,
        actor: Actor,
        now: DateTime<Utc>,
    ) -> Result<AlertEvent> {
        let seg = self.store.get_segment(id)?;
        let mut recipients = vec![seg.contract.contractor_contact.clone()];
        recipients.extend(self.config.governance.authority_contacts.iter().cloned());
        recipients.dedup();
        let nonce = auth::generate_token();
        let draft = AlertDraft {
            segment_id: id,
            transition: Transition::Manual,
            health: seg.health,
            recipients,
            message: message.map(str::to_owned).unwrap_or_else(|| {
                format!(
                    "Segment {id} ({}) is {}; please inspect",
                    seg.contract.contractor_name, seg.health
                )
            }),
            created_at: now,
            // manual alerts are never deduplicated
            idempotency_key: hex_sha256(format!("{id}|manual|{nonce}").as_bytes()),
        };
        let event = self
            .store
            .insert_alert(actor, &draft)?
            .ok_or_else(|| ServiceError::InvalidInput("duplicate manual alert".into()))?;
        self.dispatch(event.id, now)
    }

    /// Attempts delivery of one alert. Events that are no longer Pending, and
    /// any event when no sink is configured, are returned unchanged.
    pub fn dispatch(&self, id: i64, now: DateTime<Utc>) -> Result<AlertEvent> {
        let event = self.store.get_alert(id)?;
        let Some(sink) = &self.sink else {
            return Ok(event);
        };
        if event.delivery_status != DeliveryStatus::Pending {
            return Ok(event);
        }
        let contractor = self
            .store
            .get_segment(event.segment_id)
            .map(|s| s.contract.contractor_name)
            .unwrap_or_default();
        let payload = WebhookPayload {
            event_id: event.id,
            segment_id: event.segment_id,
            transition: event.transition.to_string(),
            health: event.health,
            contractor: &contractor,
            recipients: &event.recipients,
            message: &event.message,
            created_at: event.created_at,
        };
        let outcome = sink.deliver(&payload);
        let status = if outcome.delivered {
            DeliveryStatus::Sent
        } else {
            DeliveryStatus::Failed
        };
        Ok(self
            .store
            .record_delivery(id, status, outcome.attempts, outcome.last_error.as_deref(), now)?)
    }

    /// Delivers every Pending alert, oldest first.
    pub fn dispatch_pending(&self, now: DateTime<Utc>) -> Result<Vec<AlertEvent>> {
        if self.sink.is_none() {
            return Ok(Vec::new());
        }
        self.store
            .pending_alerts()?
            .into_iter()
            .map(|e| self.dispatch(e.id, now))
            .collect()
    }

    pub fn create_account(
        &self,
        username: &str,
        password: &str,
        role: Role,
        actor: Actor,
        now: DateTime<Utc>,
    ) -> Result<Account> {
        if password.chars().count() < MIN_PASSWORD_LEN {
            return Err(ServiceError::InvalidInput(format!(
                "password must be at least {MIN_PASSWORD_LEN} characters"
            )));
        }
        let digest = auth::hash_password(password);
        Ok(self.store.create_account(actor, username, &digest, role, now)?)
    }

    /// Verifies credentials and issues a session token. Unknown users and
    /// wrong passwords are indistinguishable to the caller.
    pub fn login(&self, username: &str, password: &str, now: DateTime<Utc>) -> Result<Session> {
        let Some((account, digest)) = self.store.credentials(username)? else {
            auth::verify_against_dummy(password);
            return Err(ServiceError::BadCredentials);
        };
        if !auth::verify_password(password, &digest) {
            return Err(ServiceError::BadCredentials);
        }
        let token = auth::generate_token();
        let ttl = chrono::Duration::from_std(self.config.session_ttl)
            .map_err(|_| ServiceError::InvalidInput("session ttl out of range".into()))?;
        let expires_at = now + ttl;
        self.store
            .insert_session(&auth::token_digest(&token), account.id, now, expires_at)?;
        Ok(Session {
            token,
            expires_at,
            account,
        })
    }

    pub fn authenticate(&self, token: &str, now: DateTime<Utc>) -> Result<Option<Account>> {
        Ok(self.store.session_account(&auth::token_digest(token), now)?)
    }

    /// Segments and potholes as one FeatureCollection. The public form is the
    /// map layer and carries Active potholes only; the private form carries
    /// every row.
    pub fn export(&self, vis: Visibility) -> Result<String> {
        let mut potholes = self.store.list_potholes()?;
        if vis == Visibility::Public {
            potholes.retain(|p| p.status == PotholeStatus::Active);
        }
        Ok(export_geojson(&potholes, &self.store.list_segments()?, vis))
    }

    /// Loads a private export. Segments are written before potholes so that
    /// pothole references resolve.
    pub fn import(&self, text: &str, actor: Actor, now: DateTime<Utc>) -> Result<(usize, usize)> {
        let doc = import_geojson(text)?;
        self.store.atomic(|| -> Result<(usize, usize)> {
            for s in &doc.segments {
                self.store.import_segment(actor, s, now)?;
            }
            for p in &doc.potholes {
                self.store.import_pothole(actor, p, now)?;
            }
            Ok((doc.segments.len(), doc.potholes.len()))
        })
    }
}
