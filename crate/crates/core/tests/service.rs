use std::time::Duration;

use chrono::{DateTime, Utc};
use roadwatch_core::geojson::import_geojson;
use roadwatch_core::governance::WebhookSink;
use roadwatch_core::segment::OsrmClient;
use roadwatch_core::service::{RouteMode, SegmentEdit, WarrantyStatus};
use roadwatch_core::store::AuditAction;
use roadwatch_core::testing::fixtures::{self, drive_a, drive_b, instant};
use roadwatch_core::testing::{OsrmStub, WebhookStub};
use roadwatch_core::{
    Actor, Config, DeliveryStatus, HealthState, LatLon, PotholeStatus, Service, ServiceError, Store,
    Transition, Visibility,
};

fn service() -> Service {
    Service::from_config(Store::open_in_memory().unwrap(), Config::default())
}

fn sink(hook: &WebhookStub) -> WebhookSink {
    WebhookSink::new(hook.url(), Some("hook-secret".into())).with_retry(3, Duration::from_millis(5))
}

fn ingest_a(s: &Service) -> roadwatch_core::service::IngestReport {
    s.ingest(
        &fixtures::three_frames(drive_a(), 10),
        fixtures::track_csv(drive_a(), 40).as_bytes(),
        Actor::Operator,
        drive_a() + chrono::Duration::minutes(5),
    )
    .unwrap()
}

fn ingest_b(s: &Service) -> roadwatch_core::service::IngestReport {
    s.ingest(
        &fixtures::clean_frames(drive_b(), 40),
        fixtures::track_csv(drive_b(), 40).as_bytes(),
        Actor::Operator,
        drive_b() + chrono::Duration::minutes(5),
    )
    .unwrap()
}

fn segment(s: &Service, warranty_end: &str, at: DateTime<Utc>) -> i64 {
    s.create_segment(&fixtures::short_segment(warranty_end), Actor::Operator, at)
        .unwrap()
        .id
}

#[test]
fn three_frames_make_one_pothole() {
    let s = service();
    let r = ingest_a(&s);
    assert_eq!(
        (r.geotag.frames, r.geotag.boxes, r.geotag.observations),
        (3, 3, 3)
    );
    assert_eq!(r.registry.clusters, 1);
    assert_eq!(r.registry.potholes_created, 1);
    let ps = s.store().list_potholes().unwrap();
    assert_eq!(ps.len(), 1);
    assert_eq!(ps[0].position(), fixtures::position_at(10));
    assert_eq!(ps[0].detection_count, 3);
    assert!(ps[0].thumbnail.is_some());
}

#[test]
fn repeat_upload_merges_instead_of_duplicating() {
    let s = service();
    ingest_a(&s);
    let r = ingest_a(&s);
    assert_eq!((r.registry.potholes_created, r.registry.potholes_merged), (0, 1));
    let ps = s.store().list_potholes().unwrap();
    assert_eq!(ps.len(), 1);
    assert_eq!(ps[0].detection_count, 6);
}

#[test]
fn repair_loop_end_to_end() {
    let hook = WebhookStub::start(vec![200]);
    let s = service().with_sink(sink(&hook));
    let seg = segment(&s, "2026-12-31", drive_a());
    assert_eq!(s.store().get_segment(seg).unwrap().health, HealthState::Green);

    let a = ingest_a(&s);
    assert_eq!(
        (a.registry.potholes_created, a.segments_changed, a.alerts_created),
        (1, 1, 1)
    );
    let p = s.store().list_potholes().unwrap().remove(0);
    assert_eq!(p.segment_id, Some(seg));
    assert_eq!(s.store().get_segment(seg).unwrap().health, HealthState::Yellow);
    let sent = hook.requests();
    assert_eq!(sent.len(), 1);
    assert_eq!(sent[0].authorization.as_deref(), Some("Bearer hook-secret"));
    assert_eq!(sent[0].json()["transition"], "green->yellow");
    let recipients = sent[0].json()["recipients"].clone();
    assert_eq!(recipients[0], "site-office@kalinga.example");

    let b = ingest_b(&s);
    assert_eq!(b.registry.potholes_repaired, 1);
    assert_eq!(
        s.store().get_pothole(p.id).unwrap().status,
        PotholeStatus::Repaired
    );
    assert_eq!(s.store().get_segment(seg).unwrap().health, HealthState::Green);
    let public = import_geojson(&s.export(Visibility::Public).unwrap()).unwrap();
    assert!(public.potholes.is_empty());
    let private = import_geojson(&s.export(Visibility::Private).unwrap()).unwrap();
    assert_eq!(private.potholes[0].status, PotholeStatus::Repaired);

    let trail: Vec<String> = s
        .store()
        .audit_log()
        .unwrap()
        .into_iter()
        .map(|r| r.action)
        .collect();
    let pos = |a: AuditAction, nth: usize| {
        trail
            .iter()
            .enumerate()
            .filter(|(_, x)| x.as_str() == a.as_str())
            .nth(nth)
            .map(|(i, _)| i)
            .unwrap_or_else(|| panic!("missing {a:?} #{nth} in {trail:?}"))
    };
    assert!(pos(AuditAction::IngestBatch, 0) < pos(AuditAction::PotholeCreated, 0));
    assert!(pos(AuditAction::PotholeCreated, 0) < pos(AuditAction::AlertCreated, 0));
    assert!(pos(AuditAction::AlertCreated, 0) < pos(AuditAction::AlertSent, 0));
    assert!(pos(AuditAction::AlertSent, 0) < pos(AuditAction::IngestBatch, 1));
    assert!(pos(AuditAction::IngestBatch, 1) < pos(AuditAction::PotholeRepaired, 0));
    assert!(pos(AuditAction::PotholeRepaired, 0) < pos(AuditAction::AlertCreated, 1));
}

#[test]
fn redetected_pothole_is_not_repaired() {
    let s = service();
    ingest_a(&s);
    let r = s
        .ingest(
            &fixtures::three_frames(drive_b(), 10),
            fixtures::track_csv(drive_b(), 40).as_bytes(),
            Actor::Operator,
            drive_b(),
        )
        .unwrap();
    assert_eq!((r.registry.potholes_merged, r.registry.potholes_repaired), (1, 0));
}

#[test]
fn routed_segment_follows_provider_geometry() {
    let osrm = OsrmStub::route(&[(20.297, 85.8245), (20.2978, 85.8247), (20.2985, 85.8245)]);
    let s = service().with_router(Box::new(OsrmClient::new(osrm.url())));
    let mut req = fixtures::short_segment("2026-12-31");
    req.mode = RouteMode::Routed;
    let seg = s.create_segment(&req, Actor::Operator, drive_a()).unwrap();
    let v = seg.geometry.vertices();
    assert_eq!(v.len(), 3);
    assert_eq!(v[1], LatLon::new(20.2978, 85.8247));
    let uri = &osrm.requests()[0].uri;
    assert!(
        uri.starts_with("/route/v1/driving/85.8245,20.297;85.8245,20.2985"),
        "{uri}"
    );
}

#[test]
fn no_route_fails_unless_fallback_requested() {
    let osrm = OsrmStub::start(serde_json::json!({"code": "NoRoute", "routes": []}));
    let s = service().with_router(Box::new(OsrmClient::new(osrm.url())));
    let mut req = fixtures::short_segment("2026-12-31");
    req.mode = RouteMode::Routed;
    let err = s.create_segment(&req, Actor::Operator, drive_a()).unwrap_err();
    assert_eq!(err.code(), "no_route");
    assert!(s.store().list_segments().unwrap().is_empty());

    req.fallback = true;
    let seg = s.create_segment(&req, Actor::Operator, drive_a()).unwrap();
    assert_eq!(seg.geometry.vertices().len(), 2);
}

#[test]
fn unreachable_provider_is_reported() {
    let s = service().with_router(Box::new(OsrmClient::new("http://127.0.0.1:9")));
    let mut req = fixtures::short_segment("2026-12-31");
    req.mode = RouteMode::Routed;
    let err = s.create_segment(&req, Actor::Operator, drive_a()).unwrap_err();
    assert_eq!(err.code(), "provider_unreachable");
}

#[test]
fn editing_and_deleting_segments_reattributes_potholes() {
    let s = service();
    ingest_a(&s);
    let seg = segment(&s, "2026-12-31", drive_a());
    let pid = s.store().list_potholes().unwrap()[0].id;
    assert_eq!(s.store().get_pothole(pid).unwrap().segment_id, Some(seg));
    assert_eq!(s.store().get_segment(seg).unwrap().health, HealthState::Yellow);

    // move the segment north, out of attribution range
    let edit = SegmentEdit {
        start: Some(LatLon::new(20.2990, fixtures::LON)),
        end: Some(LatLon::new(20.3005, fixtures::LON)),
        mode: RouteMode::Straight,
        ..Default::default()
    };
    let moved = s.edit_segment(seg, &edit, Actor::Operator, drive_a()).unwrap();
    assert_eq!(moved.health, HealthState::Green);
    assert_eq!(s.store().get_pothole(pid).unwrap().segment_id, None);

    let stale = SegmentEdit {
        version: Some(1),
        ..Default::default()
    };
    assert_eq!(
        s.edit_segment(seg, &stale, Actor::Operator, drive_a())
            .unwrap_err()
            .code(),
        "conflicting_write"
    );

    let near = segment(&s, "2026-12-31", drive_a());
    assert_eq!(s.store().get_pothole(pid).unwrap().segment_id, Some(near));
    let detached = s.delete_segment(near, Actor::Operator, drive_a()).unwrap();
    assert_eq!(detached, vec![pid]);
    assert_eq!(s.store().get_pothole(pid).unwrap().segment_id, None);
    assert!(matches!(
        s.delete_segment(near, Actor::Operator, drive_a()),
        Err(ServiceError::Store(_))
    ));
}

#[test]
fn warranty_deadline_escalates_once() {
    let hook = WebhookStub::start(vec![200]);
    let s = service().with_sink(sink(&hook));
    let seg = segment(&s, "2025-08-20", drive_a());
    ingest_a(&s);
    assert_eq!(s.store().get_segment(seg).unwrap().health, HealthState::Yellow);

    let before = s.tick(instant("2025-08-20T23:00:00Z")).unwrap();
    assert_eq!((before.segments_changed, before.alerts_created), (0, 0));

    let t = s.tick(instant("2025-08-21T01:00:00Z")).unwrap();
    assert_eq!(
        (t.segments_evaluated, t.segments_changed, t.alerts_created),
        (1, 1, 1)
    );
    assert_eq!(s.store().get_segment(seg).unwrap().health, HealthState::Red);
    let again = s.tick(instant("2025-08-21T02:00:00Z")).unwrap();
    assert_eq!((again.segments_changed, again.alerts_created), (0, 0));

    let breaches: Vec<_> = s
        .store()
        .list_alerts()
        .unwrap()
        .into_iter()
        .filter(|e| e.transition == Transition::DeadlineBreach)
        .collect();
    assert_eq!(breaches.len(), 1);
    assert_eq!(breaches[0].delivery_status, DeliveryStatus::Sent);
    let escalation = &Config::default().governance.escalation_contacts[0];
    assert!(breaches[0].recipients.contains(escalation));
    assert_eq!(
        hook.requests().last().unwrap().json()["transition"],
        "deadline_breach"
    );

    let report = s.report(seg, instant("2025-08-21T01:00:00Z"), false).unwrap();
    assert_eq!(report.warranty_status, WarrantyStatus::Expired);
    assert_eq!(report.days_to_deadline, -1);
}

#[test]
fn replayed_transition_within_a_day_is_suppressed() {
    let s = service();
    let seg = segment(&s, "2026-12-31", drive_a());
    ingest_a(&s);
    assert_eq!(s.store().list_alerts().unwrap().len(), 1);

    // force the segment back to Green and replay the evaluation
    let mut g = s.store().get_segment(seg).unwrap();
    g.health = HealthState::Green;
    s.store()
        .update_segment(Actor::Operator, AuditAction::SegmentUpdated, &g, drive_a())
        .unwrap();
    let t = s.tick(drive_a() + chrono::Duration::hours(3)).unwrap();
    assert_eq!((t.segments_changed, t.alerts_created), (1, 0));
    assert_eq!(s.store().list_alerts().unwrap().len(), 1);
}

#[test]
fn failed_delivery_is_retried_then_marked_failed() {
    let hook = WebhookStub::start(vec![500]);
    let s = service().with_sink(sink(&hook));
    segment(&s, "2026-12-31", drive_a());
    ingest_a(&s);
    let e = s.store().list_alerts().unwrap().remove(0);
    assert_eq!((e.delivery_status, e.attempts), (DeliveryStatus::Failed, 3));
    assert_eq!(hook.requests().len(), 3);
}

#[test]
fn retry_succeeds_after_transient_errors() {
    let hook = WebhookStub::start(vec![503, 200]);
    let s = service().with_sink(sink(&hook));
    segment(&s, "2026-12-31", drive_a());
    ingest_a(&s);
    let e = s.store().list_alerts().unwrap().remove(0);
    assert_eq!((e.delivery_status, e.attempts), (DeliveryStatus::Sent, 2));
}

#[test]
fn sent_events_are_not_redelivered() {
    let hook = WebhookStub::start(vec![200]);
    let s = service().with_sink(sink(&hook));
    let seg = segment(&s, "2026-12-31", drive_a());
    let e = s
        .notify(seg, Some("inspect please"), Actor::Operator, drive_a())
        .unwrap();
    assert_eq!(e.delivery_status, DeliveryStatus::Sent);
    assert_eq!(e.transition, Transition::Manual);
    let again = s.dispatch(e.id, drive_a()).unwrap();
    assert_eq!(again, e);
    assert_eq!(hook.requests().len(), 1);
    assert_eq!(hook.requests()[0].json()["message"], "inspect please");
}

#[test]
fn alerts_stay_pending_without_a_sink() {
    let s = service();
    let seg = segment(&s, "2026-12-31", drive_a());
    let e = s.notify(seg, None, Actor::Operator, drive_a()).unwrap();
    assert_eq!(e.delivery_status, DeliveryStatus::Pending);
}

#[test]
fn report_counts_and_contact_visibility() {
    let s = service();
    let seg = segment(&s, "2026-12-31", drive_a());
    ingest_a(&s);
    let now = drive_a() + chrono::Duration::hours(1);
    let public = s.report(seg, now, false).unwrap();
    assert_eq!(public.health, HealthState::Yellow);
    assert_eq!(public.active_potholes, 1);
    assert_eq!(public.warranty_status, WarrantyStatus::Active);
    assert!(public.days_to_deadline > 0);
    assert!((public.density_per_km - 1000.0 / public.length_m).abs() < 1e-9);
    assert_eq!(public.contract.contractor_contact, None);
    assert!(public.recent_events.iter().all(|e| e.recipients.is_none()));
    let private = s.report(seg, now, true).unwrap();
    assert_eq!(
        private.contract.contractor_contact.as_deref(),
        Some("site-office@kalinga.example")
    );
    assert_eq!(s.report(999, now, true).unwrap_err().code(), "not_found");
}

#[test]
fn private_export_round_trips_through_import() {
    let s = service();
    segment(&s, "2026-12-31", drive_a());
    ingest_a(&s);
    let text = s.export(Visibility::Private).unwrap();

    let t = service();
    assert_eq!(t.import(&text, Actor::Operator, drive_b()).unwrap(), (1, 1));
    assert_eq!(t.export(Visibility::Private).unwrap(), text);
}

#[test]
fn malformed_inputs_are_user_errors() {
    let s = service();
    let gps = fixtures::track_csv(drive_a(), 40);
    let err = s
        .ingest("{not json", gps.as_bytes(), Actor::Operator, drive_a())
        .unwrap_err();
    assert!(err.is_user_error());
    assert_eq!(err.code(), "invalid_detections");
    let err = s
        .ingest(
            &fixtures::three_frames(drive_a(), 10),
            b"lat,lon\n",
            Actor::Operator,
            drive_a(),
        )
        .unwrap_err();
    assert_eq!(err.code(), "invalid_gps");
    assert!(s.store().list_batches().unwrap().is_empty());
}

#[test]
fn accounts_and_sessions() {
    let s = service();
    let now = drive_a();
    let err = s
        .create_account(
            "meera",
            "short",
            roadwatch_core::store::Role::Authority,
            Actor::Operator,
            now,
        )
        .unwrap_err();
    assert_eq!(err.code(), "invalid_input");
    s.create_account(
        "meera",
        "correct horse",
        roadwatch_core::store::Role::Authority,
        Actor::Operator,
        now,
    )
    .unwrap();
    assert_eq!(
        s.login("meera", "wrong pass", now).unwrap_err().code(),
        "bad_credentials"
    );
    assert_eq!(
        s.login("nobody", "wrong pass", now).unwrap_err().code(),
        "bad_credentials"
    );
    let session = s.login("meera", "correct horse", now).unwrap();
    assert!(session.token.len() >= 32);
    assert!(s.authenticate(&session.token, now).unwrap().is_some());
    assert!(s
        .authenticate(&session.token, session.expires_at)
        .unwrap()
        .is_none());
}
