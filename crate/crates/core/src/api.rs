//! HTTP boundary over [`Service`].
//!
//! Reads are public. Mutations need a bearer token from `/api/auth/login`.
//! Store work runs on the blocking pool behind a single mutex, which is the
//! one writer the store allows.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Query, State};
use axum::http::header::{self, HeaderMap, HeaderValue};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dedupe::PotholeStatus;
use crate::geojson::{export_geojson, Visibility};
use crate::segment::polyline_length_m;
use crate::service::{SegmentEdit, SegmentRequest, Service, ServiceError};
use crate::store::{Account, Actor, BBox, PotholeQuery, StoreError};

/// Source of "now" for every request.
pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
struct AppState {
    service: Arc<Mutex<Service>>,
    limiter: Arc<Mutex<RateLimiter>>,
    clock: Clock,
}

struct RateLimiter {
    per_hour: usize,
    hits: HashMap<i64, VecDeque<DateTime<Utc>>>,
}

impl RateLimiter {
    /// Records a hit unless the account already used its hourly budget;
    /// returns the wait until the oldest hit expires when refused.
    fn admit(&mut self, account: i64, now: DateTime<Utc>) -> Result<(), Duration> {
        let window = chrono::Duration::hours(1);
        let q = self.hits.entry(account).or_default();
        while q.front().is_some_and(|t| *t + window <= now) {
            q.pop_front();
        }
        if q.len() >= self.per_hour {
            let wait = (q[0] + window - now).to_std().unwrap_or_default();
            return Err(wait);
        }
        q.push_back(now);
        Ok(())
    }
}

/// JSON error response.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
    headers: Vec<(header::HeaderName, HeaderValue)>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": code, "message": message.into()}),
            headers: Vec::new(),
        }
    }

    fn unauthorized() -> Self {
        let mut e = Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "a valid bearer token is required",
        );
        e.headers
            .push((header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer")));
        e
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(self.body)).into_response();
        resp.headers_mut().extend(self.headers);
        resp
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use crate::segment::RoutingError;
        let status = match &e {
            ServiceError::Store(StoreError::NotFound { .. }) => StatusCode::NOT_FOUND,
            ServiceError::Store(StoreError::ConflictingWrite { .. }) => StatusCode::CONFLICT,
            ServiceError::BadCredentials => StatusCode::UNAUTHORIZED,
            ServiceError::Routing(
                RoutingError::ProviderUnreachable(_) | RoutingError::NoRoute(_) | RoutingError::NotConfigured,
            ) => StatusCode::BAD_GATEWAY,
            e if e.is_user_error() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        let mut api = Self::new(status, e.code(), e.to_string());
        if let ServiceError::Detections(d) = &e {
            api.body["diagnostics"] = json!(d.diagnostics);
        }
        api
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), "invalid_body", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs `f` against the service on the blocking pool.
async fn with_service<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let service = state.service.clone();
    tokio::task::spawn_blocking(move || {
        let guard = service
            .lock()
            .map_err(|_| ApiError::internal("service lock poisoned"))?;
        f(&guard).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

fn bearer(parts: &Parts) -> Option<String> {
    let value = parts.headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme
        .eq_ignore_ascii_case("bearer")
        .then(|| token.trim().to_string())
}

async fn resolve(state: &AppState, token: Option<String>) -> ApiResult<Option<Account>> {
    let Some(token) = token else {
        return Ok(None);
    };
    let now = (state.clock)();
    with_service(state, move |s| s.authenticate(&token, now)).await
}

/// An account holding a valid, unexpired session.
struct Authed(Account);

impl FromRequestParts<AppState> for Authed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> ApiResult<Self> {
        resolve(state, bearer(parts))
            .await?
            .map(Authed)
            .ok_or_else(ApiError::unauthorized)
    }
}

/// The caller's account when a valid token is presented, `None` otherwise.
struct MaybeAuthed(Option<Account>);

impl FromRequestParts<AppState> for MaybeAuthed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> ApiResult<Self> {
        Ok(Self(resolve(state, bearer(parts)).await?))
    }
}

/// Builds the router with the wall clock.
pub fn router(service: Service) -> Router {
    router_with_clock(service, Arc::new(Utc::now))
}

pub fn router_with_clock(service: Service, clock: Clock) -> Router {
    let upload_limit = service.config().max_upload_bytes;
    let state = AppState {
        limiter: Arc::new(Mutex::new(RateLimiter {
            per_hour: service.config().ingest_per_hour as usize,
            hits: HashMap::new(),
        })),
        service: Arc::new(Mutex::new(service)),
        clock,
    };
    Router::new()
        .route("/api/auth/login", post(login))
        .route(
            "/api/ingest",
            post(ingest).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/api/potholes", get(potholes))
        .route("/api/segments", get(segments).post(create_segment))
        .route("/api/segments/{id}", patch(edit_segment).delete(delete_segment))
        .route("/api/segments/{id}/report", get(report))
        .route("/api/segments/{id}/notify", post(notify))
        .with_state(state)
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Deserialize)]
struct LoginRequest {
    username: String,
    password: String,
}

async fn login(
    State(state): State<AppState>,
    body: Result<Json<LoginRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let now = (state.clock)();
    let session = with_service(&state, move |s| s.login(&req.username, &req.password, now)).await;
    match session {
        Ok(s) => Ok(Json(json!({"token": s.token, "expires_at": s.expires_at})).into_response()),
        Err(e) if e.status == StatusCode::UNAUTHORIZED => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "bad_credentials",
            "invalid username or password",
        )),
        Err(e) => Err(e),
    }
}

async fn ingest(
    State(state): State<AppState>,
    Authed(account): Authed,
    mut multipart: Multipart,
) -> ApiResult<Response> {
    let now = (state.clock)();
    let admitted = state
        .limiter
        .lock()
        .map_err(|_| ApiError::internal("rate limiter lock poisoned"))?
        .admit(account.id, now);
    if let Err(wait) = admitted {
        let mut e = ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "rate_limited",
            "hourly ingest limit reached for this account",
        );
        let secs = wait.as_secs().max(1).to_string();
        e.headers.push((
            header::RETRY_AFTER,
            HeaderValue::from_str(&secs).expect("digits are a valid header value"),
        ));
        return Err(e);
    }

    let mut detections: Option<Bytes> = None;
    let mut gps: Option<Bytes> = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(ApiError::new(e.status(), "invalid_upload", e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(e.status(), "invalid_upload", e.body_text()))?;
        match name.as_str() {
            "detections" => detections = Some(data),
            "gps" => gps = Some(data),
            other => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "invalid_upload",
                    format!("unexpected part {other:?}; expected \"detections\" and \"gps\""),
                ))
            }
        }
    }
    let missing = |part: &str| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "missing_part",
            format!("multipart part {part:?} is required"),
        )
    };
    let detections = detections.ok_or_else(|| missing("detections"))?;
    let gps = gps.ok_or_else(|| missing("gps"))?;
    let detections = String::from_utf8(detections.to_vec()).map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_detections",
            "detections part is not UTF-8",
        )
    })?;

    let report = with_service(&state, move |s| {
        s.ingest(&detections, &gps, Actor::Account(account.id), now)
    })
    .await?;
    Ok((StatusCode::OK, Json(report)).into_response())
}

/// Body plus a strong validator; a matching `If-None-Match` yields 304.
fn geojson_response(headers: &HeaderMap, body: String) -> Response {
    let etag = format!("\"{}\"", hex::encode(Sha256::digest(body.as_bytes())));
    let matches = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == "*" || v.split(',').any(|t| t.trim() == etag));
    let etag = HeaderValue::from_str(&etag).expect("hex digest is a valid header value");
    if matches {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response();
    }
    (
        StatusCode::OK,
        [
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/geo+json"),
            ),
            (header::CACHE_CONTROL, HeaderValue::from_static("no-cache")),
            (header::ETAG, etag),
        ],
        body,
    )
        .into_response()
}

#[derive(Deserialize, Default)]
struct PotholeParams {
    bbox: Option<String>,
    status: Option<String>,
    from: Option<String>,
    to: Option<String>,
    category: Option<String>,
}

fn parse_instant(name: &str, v: &str) -> ApiResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(v)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_query",
                format!("{name} must be an RFC 3339 instant"),
            )
        })
}

impl PotholeParams {
    /// Without `status` only Active potholes are listed, which is what the
    /// map shows; `status=all` lifts that.
    fn into_query(self) -> ApiResult<PotholeQuery> {
        let bbox = self
            .bbox
            .as_deref()
            .map(|b| b.parse::<BBox>())
            .transpose()
            .map_err(ServiceError::from)?;
        let status = match self.status.as_deref() {
            None => Some(PotholeStatus::Active),
            Some("all") => None,
            Some(s) => Some(PotholeStatus::parse(s).ok_or_else(|| {
                ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "invalid_query",
                    "status must be active, repaired or all",
                )
            })?),
        };
        Ok(PotholeQuery {
            bbox,
            status,
            from: self
                .from
                .as_deref()
                .map(|v| parse_instant("from", v))
                .transpose()?,
            to: self.to.as_deref().map(|v| parse_instant("to", v)).transpose()?,
            category: self.category,
        })
    }
}

fn query_error(e: axum::extract::rejection::QueryRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", e.body_text())
}

async fn potholes(
    State(state): State<AppState>,
    headers: HeaderMap,
    params: Result<Query<PotholeParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(params) = params.map_err(query_error)?;
    let q = params.into_query()?;
    let body = with_service(&state, move |s| {
        let found = s.store().query_potholes(&q)?;
        Ok(export_geojson(&found, &[], Visibility::Public))
    })
    .await?;
    Ok(geojson_response(&headers, body))
}

#[derive(Deserialize, Default)]
struct SegmentParams {
    category: Option<String>,
}

async fn segments(
    State(state): State<AppState>,
    headers: HeaderMap,
    params: Result<Query<SegmentParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(params) = params.map_err(query_error)?;
    let body = with_service(&state, move |s| {
        let mut segs = s.store().list_segments()?;
        if let Some(c) = &params.category {
            segs.retain(|seg| seg.contract.category.as_deref() == Some(c.as_str()));
        }
        Ok(export_geojson(&[], &segs, Visibility::Public))
    })
    .await?;
    Ok(geojson_response(&headers, body))
}

#[derive(Deserialize, Default)]
struct CreateParams {
    #[serde(default)]
    dry_run: bool,
}

async fn create_segment(
    State(state): State<AppState>,
    Authed(account): Authed,
    params: Result<Query<CreateParams>, axum::extract::rejection::QueryRejection>,
    body: Result<Json<SegmentRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Query(params) = params.map_err(query_error)?;
    let Json(req) = body?;
    if params.dry_run {
        let line = with_service(&state, move |s| s.preview_segment(&req)).await?;
        let coordinates: Vec<[f64; 2]> = line.vertices().iter().map(|v| [v.lon, v.lat]).collect();
        return Ok(Json(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coordinates},
            "properties": {"length_m": polyline_length_m(&line), "preview": true},
        }))
        .into_response());
    }
    let now = (state.clock)();
    let seg = with_service(&state, move |s| {
        s.create_segment(&req, Actor::Account(account.id), now)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(seg)).into_response())
}

async fn edit_segment(
    State(state): State<AppState>,
    Authed(account): Authed,
    Path(id): Path<i64>,
    body: Result<Json<SegmentEdit>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(edit) = body?;
    let now = (state.clock)();
    let seg = with_service(&state, move |s| {
        s.edit_segment(id, &edit, Actor::Account(account.id), now)
    })
    .await?;
    Ok(Json(seg).into_response())
}

async fn delete_segment(
    State(state): State<AppState>,
    Authed(account): Authed,
    Path(id): Path<i64>,
) -> ApiResult<Response> {
    let now = (state.clock)();
    let detached = with_service(&state, move |s| {
        s.delete_segment(id, Actor::Account(account.id), now)
    })
    .await?;
    Ok(Json(json!({"deleted": id, "detached_potholes": detached})).into_response())
}

async fn report(
    State(state): State<AppState>,
    MaybeAuthed(account): MaybeAuthed,
    Path(id): Path<i64>,
) -> ApiResult<Response> {
    let now = (state.clock)();
    let include_contact = account.is_some();
    let report = with_service(&state, move |s| s.report(id, now, include_contact)).await?;
    Ok(Json(report).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct NotifyRequest {
    message: Option<String>,
}

async fn notify(
    State(state): State<AppState>,
    Authed(account): Authed,
    Path(id): Path<i64>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: NotifyRequest = if body.iter().all(u8::is_ascii_whitespace) {
        NotifyRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))?
    };
    let now = (state.clock)();
    let event = with_service(&state, move |s| {
        s.notify(id, req.message.as_deref(), Actor::Account(account.id), now)
    })
    .await?;
    Ok(Json(event).into_response())
}
