//! JSON-over-HTTP session service.
//!
//! Scenes are immutable once uploaded. Each session sits behind its own async
//! mutex, so requests on one session run in arrival order while different
//! sessions proceed in parallel.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use howseg_core::annotator::{evaluate, run_strategy, StrategyKind, StrategySpec};
use howseg_core::io::read_scene;
use howseg_core::metrics::SegmentationScores;
use howseg_core::{ClickRequest, SceneFrame, Session, SessionConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Most points sent in one state response.
pub const WIRE_POINT_LIMIT: usize = 100_000;

type SharedSession = Arc<tokio::sync::Mutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    scenes: RwLock<HashMap<u64, Arc<SceneFrame>>>,
    sessions: Mutex<HashMap<u64, SharedSession>>,
    next_id: AtomicU64,
    wire_limit: usize,
}

impl Default for AppState {
    fn default() -> Self {
        Self::with_wire_limit(WIRE_POINT_LIMIT)
    }
}

impl AppState {
    /// State whose responses carry at most `wire_limit` points per chunk.
    pub fn with_wire_limit(wire_limit: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                scenes: RwLock::default(),
                sessions: Mutex::default(),
                next_id: AtomicU64::new(1),
                wire_limit: wire_limit.max(1),
            }),
        }
    }

    fn fresh_id(&self) -> u64 {
        self.inner.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn session(&self, id: u64) -> Result<SharedSession, ApiError> {
        self.inner
            .sessions
            .lock()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    code: Option<u8>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            code: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(code) = self.code {
            body["code"] = json!(code);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/scenes", post(upload_scene))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary).delete(delete_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/sessions/{id}/simulate", post(simulate))
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

/// Runs `f` on the blocking pool while holding the session's lock.
async fn with_session<T, F>(session: SharedSession, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
{
    let mut guard = session.lock_owned().await;
    tokio::task::spawn_blocking(move || f(&mut guard))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn upload_scene(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let frame = tokio::task::spawn_blocking(move || read_scene(&body))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(|e| ApiError {
            code: Some(e.code()),
            ..ApiError::bad_request(e.to_string())
        })?;
    let id = state.fresh_id();
    let summary = json!({
        "scene_id": id,
        "points": frame.len(),
        "feature_dim": frame.feature_dim(),
        "base_classes": frame.class_names().base,
        "has_ground_truth": frame.gt_labels().is_some(),
    });
    state
        .inner
        .scenes
        .write()
        .expect("scene map poisoned")
        .insert(id, Arc::new(frame));
    Ok((StatusCode::CREATED, Json(summary)))
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    scene_id: u64,
    #[serde(default)]
    config: SessionConfig,
}

#[derive(Debug, Serialize)]
struct LabelSpaceWire<'a> {
    base: &'a [String],
    novel: &'a [String],
    unknown: &'a str,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    session_id: u64,
    iteration: u32,
    points: usize,
    prototypes: usize,
    annotations: usize,
    label_space: LabelSpaceWire<'a>,
    metrics: Option<SegmentationScores>,
    diagnostics: &'a [String],
}

fn metrics_of(session: &Session) -> Option<SegmentationScores> {
    session.frame().gt_labels()?;
    evaluate(session).ok()
}

fn summary_json(id: u64, session: &Session) -> Value {
    let space = session.label_space();
    let unknown = space.name(space.unknown()).expect("unknown label");
    serde_json::to_value(Summary {
        session_id: id,
        iteration: session.iteration(),
        points: session.frame().len(),
        prototypes: session.prototypes().len(),
        annotations: session.annotations().len(),
        label_space: LabelSpaceWire {
            base: space.base_names(),
            novel: space.novel_names(),
            unknown,
        },
        metrics: metrics_of(session),
        diagnostics: &session.last_report().diagnostics,
    })
    .expect("summary serializes")
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad session request: {e}")))?;
    let frame = state
        .inner
        .scenes
        .read()
        .expect("scene map poisoned")
        .get(&req.scene_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no scene {}", req.scene_id)))?;
    req.config
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let session = tokio::task::spawn_blocking(move || Session::open(frame, req.config))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = state.fresh_id();
    let summary = summary_json(id, &session);
    state
        .inner
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn session_summary(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let session = state.session(id)?;
    let guard = session.lock().await;
    Ok(Json(summary_json(id, &guard)))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    let removed = state
        .inner
        .sessions
        .lock()
        .expect("session map poisoned")
        .remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("no session {id}"))),
    }
}

#[derive(Debug, Deserialize)]
struct StateQuery {
    #[serde(default)]
    chunk: usize,
    #[serde(default)]
    full: Option<String>,
}

impl StateQuery {
    fn full(&self) -> bool {
        matches!(self.full.as_deref(), Some("1" | "true"))
    }
}

/// Point indices sent on the wire: every point at full resolution, otherwise
/// a fixed stride that keeps at most `limit` points.
pub fn wire_indices(n: usize, limit: usize, full: bool) -> Vec<usize> {
    let stride = if full { 1 } else { n.div_ceil(limit).max(1) };
    (0..n).step_by(stride).collect()
}

fn state_json(id: u64, session: &Session, query: &StateQuery, limit: usize) -> ApiResult<Value> {
    let n = session.frame().len();
    let selected = wire_indices(n, limit, query.full());
    let chunks = selected.len().div_ceil(limit).max(1);
    if query.chunk >= chunks {
        return Err(ApiError::not_found(format!("chunk {} of {chunks}", query.chunk)));
    }
    let lo = query.chunk * limit;
    let hi = (lo + limit).min(selected.len());
    let indices = &selected[lo..hi];
    let space = session.label_space();
    let name = |l| space.name(l).expect("label in space");
    let pred = session.prediction();
    let positions = session.frame().positions();
    let stride = if selected.len() > 1 { selected[1] - selected[0] } else { 1 };
    Ok(json!({
        "session_id": id,
        "iteration": session.iteration(),
        "points": n,
        "stride": stride,
        "chunk": query.chunk,
        "chunks": chunks,
        "indices": indices,
        "positions": indices.iter().map(|&i| positions[i]).collect::<Vec<_>>(),
        "labels": indices.iter().map(|&i| name(pred.point_labels[i])).collect::<Vec<_>>(),
        "label_space": {
            "base": space.base_names(),
            "novel": space.novel_names(),
            "unknown": name(space.unknown()),
        },
        "prototypes": {
            "labels": pred.prototype_labels.iter().map(|&l| name(l)).collect::<Vec<_>>(),
            "probs": pred.prototype_probs.iter_rows().collect::<Vec<_>>(),
            "member_counts": session.prototypes().member_counts,
        },
        "metrics": metrics_of(session),
    }))
}

async fn session_state(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Query(query): Query<StateQuery>,
) -> ApiResult<Json<Value>> {
    let session = state.session(id)?;
    let limit = state.inner.wire_limit;
    with_session(session, move |s| state_json(id, s, &query, limit))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct WireClick {
    point: usize,
    label_name: String,
}

#[derive(Debug, Deserialize)]
struct AnnotateBody {
    clicks: Vec<WireClick>,
}

/// Parses a click batch; any malformed field rejects the whole batch.
fn parse_clicks(body: &[u8]) -> ApiResult<Vec<ClickRequest>> {
    let parsed: AnnotateBody =
        serde_json::from_slice(body).map_err(|e| ApiError::conflict(format!("malformed clicks: {e}")))?;
    parsed
        .clicks
        .into_iter()
        .map(|c| {
            if c.label_name.trim().is_empty() {
                Err(ApiError::conflict("empty label name"))
            } else {
                Ok(ClickRequest::new(c.point, c.label_name))
            }
        })
        .collect()
}

async fn annotate(State(state): State<AppState>, Path(id): Path<u64>, body: Bytes) -> ApiResult<Json<Value>> {
    let session = state.session(id)?;
    let clicks = parse_clicks(&body)?;
    with_session(session, move |s| {
        s.apply_clicks(&clicks)
            .map_err(|e| ApiError::conflict(e.to_string()))?;
        Ok(summary_json(id, s))
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct SimulateBody {
    strategy: String,
    budget: usize,
}

async fn simulate(State(state): State<AppState>, Path(id): Path<u64>, body: Bytes) -> ApiResult<Json<Value>> {
    let session = state.session(id)?;
    let req: SimulateBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad simulate request: {e}")))?;
    let kind: StrategyKind = req
        .strategy
        .parse()
        .map_err(|_| ApiError::bad_request(format!("unknown strategy {:?}", req.strategy)))?;
    let spec = StrategySpec::new(kind, req.budget);
    spec.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    with_session(session, move |s| {
        if s.frame().gt_labels().is_none() {
            return Err(ApiError::conflict("simulation needs ground truth"));
        }
        let outcome = run_strategy(s, &spec).map_err(|e| ApiError::conflict(e.to_string()))?;
        Ok(json!({
            "strategy": kind.name(),
            "budget": req.budget,
            "clicks_used": outcome.clicks_used,
            "terminated_early": outcome.terminated_early,
            "clicks": outcome.clicks.iter().map(|c| json!({"point": c.point, "label_name": c.label})).collect::<Vec<_>>(),
            "summary": summary_json(id, s),
        }))
    })
    .await
    .map(Json)
}

pub async fn serve(port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("howseg listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::default())).await?;
    Ok(())
}
