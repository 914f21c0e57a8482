//! HTTP facade over the engine: an in-memory scorecard registry and a
//! bounded pool of solves.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::{Any, CorsLayer};
use uuid::Uuid;

use scorecf::engine::run;
use scorecf::query::QueryDoc;
use scorecf::scorecard::Scorecard;
use scorecf::stats::Dataset;
use scorecf::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Limits {
    pub max_concurrent_solves: usize,
    /// Requests allowed to wait for a solver slot before 503.
    pub queue_depth: usize,
    pub default_time_limit: f64,
    pub max_time_limit: f64,
    pub max_body_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_concurrent_solves: 4,
            queue_depth: 16,
            default_time_limit: 10.0,
            max_time_limit: 60.0,
            max_body_bytes: 1 << 20,
        }
    }
}

struct Entry {
    scorecard: Arc<Scorecard>,
    data: Option<Arc<Dataset>>,
    document: Value,
    created_at: u64,
}

pub struct AppState {
    limits: Limits,
    registry: RwLock<HashMap<Uuid, Arc<Entry>>>,
    slots: Arc<Semaphore>,
    admitted: AtomicUsize,
}

/// A request counted against the solve queue; released on drop.
pub struct Admission(Arc<AppState>);

impl Drop for Admission {
    fn drop(&mut self) {
        self.0.admitted.fetch_sub(1, Ordering::SeqCst);
    }
}

impl AppState {
    pub fn new(limits: Limits) -> Arc<Self> {
        Arc::new(Self {
            limits,
            registry: RwLock::new(HashMap::new()),
            slots: Arc::new(Semaphore::new(limits.max_concurrent_solves)),
            admitted: AtomicUsize::new(0),
        })
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    /// Reserves a place among running and queued solves, or `None` when
    /// both are full.
    pub fn try_admit(self: &Arc<Self>) -> Option<Admission> {
        let cap = self.limits.max_concurrent_solves + self.limits.queue_depth;
        let prev = self.admitted.fetch_add(1, Ordering::SeqCst);
        if prev >= cap {
            self.admitted.fetch_sub(1, Ordering::SeqCst);
            return None;
        }
        Some(Admission(Arc::clone(self)))
    }

    fn get(&self, id: &str) -> Option<Arc<Entry>> {
        let id = Uuid::parse_str(id).ok()?;
        self.registry.read().expect("registry lock").get(&id).cloned()
    }
}

pub fn app(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/api/scorecards", post(register))
        .route("/api/scorecards/{id}", get(fetch))
        .route("/api/scorecards/{id}/counterfactuals", post(counterfactuals))
        .layer(DefaultBodyLimit::max(state.limits.max_body_bytes))
        .layer(cors)
        .with_state(state)
}

/// Binds and serves until interrupted.
pub async fn serve(addr: SocketAddr, limits: Limits) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(AppState::new(limits)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn error_body(status: StatusCode, kind: &str, message: String, field: Option<&str>) -> Response {
    let mut body = json!({ "error": kind, "message": message });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    (status, Json(body)).into_response()
}

fn engine_error(e: &Error) -> Response {
    let status = if e.is_input_error() {
        StatusCode::UNPROCESSABLE_ENTITY
    } else {
        StatusCode::INTERNAL_SERVER_ERROR
    };
    error_body(status, e.kind(), e.to_string(), e.field())
}

fn not_found(id: &str) -> Response {
    error_body(
        StatusCode::NOT_FOUND,
        "not_found",
        format!("no scorecard with id `{id}`"),
        None,
    )
}

fn parse_json(body: &[u8]) -> Result<Value, Response> {
    serde_json::from_slice(body).map_err(|e| engine_error(&Error::Schema(e.to_string())))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "limits": state.limits,
    }))
}

/// Accepts either a bare scorecard document or
/// `{"scorecard": ..., "data": "<csv text>"}`.
async fn register(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let value = match parse_json(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let (document, csv) = match value {
        Value::Object(mut map) if map.contains_key("scorecard") => {
            let csv = match map.remove("data") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s),
                Some(_) => {
                    return engine_error(&Error::Validation {
                        context: "data".into(),
                        message: "sample data must be CSV text".into(),
                    });
                }
            };
            if let Some(extra) = map.keys().find(|k| *k != "scorecard") {
                return engine_error(&Error::Schema(format!("unknown field `{extra}`")));
            }
            (map.remove("scorecard").unwrap_or(Value::Null), csv)
        }
        other => (other, None),
    };
    let scorecard = match Scorecard::from_value(document.clone()) {
        Ok(sc) => sc,
        Err(e) => return engine_error(&e),
    };
    let data = match csv.map(|text| Dataset::from_csv(text.as_bytes()).and_then(|d| d.aligned(&scorecard))) {
        None => None,
        Some(Ok(d)) => Some(Arc::new(d)),
        Some(Err(e)) => return engine_error(&e),
    };
    let id = Uuid::new_v4();
    let entry = Entry {
        scorecard: Arc::new(scorecard),
        data,
        document,
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    state
        .registry
        .write()
        .expect("registry lock")
        .insert(id, Arc::new(entry));
    (StatusCode::CREATED, Json(json!({ "id": id.to_string() }))).into_response()
}

async fn fetch(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        None => not_found(&id),
        Some(e) => Json(json!({
            "id": id,
            "created_at": e.created_at,
            "scorecard": e.document,
            "data_rows": e.data.as_ref().map(|d| d.rows.len()),
        }))
        .into_response(),
    }
}

async fn counterfactuals(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(entry) = state.get(&id) else {
        return not_found(&id);
    };
    let doc = match parse_json(&body).and_then(|v| QueryDoc::from_value(v).map_err(|e| engine_error(&e))) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let Some(admission) = state.try_admit() else {
        return error_body(
            StatusCode::SERVICE_UNAVAILABLE,
            "busy",
            "too many concurrent solves; retry later".into(),
            None,
        );
    };
    let permit = match Arc::clone(&state.slots).acquire_owned().await {
        Ok(p) => p,
        Err(_) => {
            return error_body(
                StatusCode::SERVICE_UNAVAILABLE,
                "busy",
                "solver pool closed".into(),
                None,
            )
        }
    };
    let limits = state.limits;
    let solved = tokio::task::spawn_blocking(move || {
        let _held = (admission, permit);
        run(
            &entry.scorecard,
            entry.data.as_deref(),
            &doc,
            limits.default_time_limit,
            limits.max_time_limit,
        )
    })
    .await;
    match solved {
        Ok(Ok(report)) => Json(serde_json::to_value(&report).expect("report serializes")).into_response(),
        Ok(Err(e)) => engine_error(&e),
        Err(e) => engine_error(&Error::Internal(format!("solve task failed: {e}"))),
    }
}
