//! HTTP front end for [`admitqa::service::ChatService`].
//!
//! | route | |
//! |---|---|
//! | `POST /v1/sessions` | new session |
//! | `POST /v1/sessions/{id}/messages` | answer, as server-sent events or JSON with `?stream=false` |
//! | `GET /v1/units/{id}` | text behind a citation |
//! | `POST /v1/records/{id}/verdict` | rate an answer (admin) |
//! | `GET /v1/metrics/daily?from=&to=` | per-day rollups |
//! | `GET /v1/metrics/cost?model=` | cost estimate |
//! | `POST /v1/admin/ingest` | rebuild the index (admin, exclusive) |
//! | `GET /v1/health` | liveness and index size |

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use admitqa::ids::UnitId;
use admitqa::service::{build_index, ChatService, ErrorClass, MessageReply, ServiceError};
use admitqa::telemetry::Verdict;
use admitqa::config::AppConfig;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use futures::stream::{self, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

/// Corpus files re-read by the admin ingest route, plus where to save the
/// rebuilt index.
#[derive(Debug, Clone)]
pub struct IngestSources {
    pub corpus: PathBuf,
    pub faq: PathBuf,
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<ChatService>,
    pub config: Arc<AppConfig>,
    pub admin_token: Option<String>,
    pub sources: Option<IngestSources>,
}

impl AppState {
    pub fn new(service: ChatService, config: AppConfig) -> Self {
        let admin_token = config.service.admin_token.clone();
        let sources = match (&config.service.corpus, &config.service.faq) {
            (Some(corpus), Some(faq)) => Some(IngestSources {
                corpus: corpus.clone(),
                faq: faq.clone(),
                snapshot_dir: Some(config.service.data_dir.join("index")),
            }),
            _ => None,
        };
        Self { service: Arc::new(service), config: Arc::new(config), admin_token, sources }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/units/{id}", get(get_unit))
        .route("/v1/records/{id}/verdict", post(set_verdict))
        .route("/v1/metrics/daily", get(daily))
        .route("/v1/metrics/cost", get(cost))
        .route("/v1/admin/ingest", post(ingest))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state)).await
}

/// Error body: `{"error": ..., "retryable": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retryable: bool,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), retryable: false }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, retryable) = match e.class() {
            ErrorClass::NotFound => (StatusCode::NOT_FOUND, false),
            ErrorClass::BadRequest => (StatusCode::BAD_REQUEST, false),
            ErrorClass::Conflict => (StatusCode::CONFLICT, false),
            ErrorClass::Unavailable { retryable } => (StatusCode::SERVICE_UNAVAILABLE, retryable),
            ErrorClass::Internal => (StatusCode::INTERNAL_SERVER_ERROR, false),
        };
        if status.is_server_error() {
            tracing::warn!(error = %e, "request failed");
        }
        Self { status, message: e.to_string(), retryable }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "retryable": self.retryable }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body parsing with our error shape instead of axum's plain-text one.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(expected) = &state.admin_token else {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "admin token not configured"));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(expected.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong admin token"))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn create_session(State(state): State<AppState>) -> ApiResult<impl IntoResponse> {
    let id = state.service.create_session()?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

enum Progress {
    Token(String),
    Done(Result<MessageReply, ServiceError>),
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> ApiResult<Response> {
    let MessageBody { text } = parse_body(&body)?;
    let stream = match q.get("stream").map(String::as_str) {
        None | Some("true") | Some("1") => true,
        Some("false") | Some("0") => false,
        Some(other) => return Err(ApiError::bad_request(format!("`stream` must be true or false, got {other}"))),
    };
    let svc = state.service.clone();
    if !stream {
        let reply = blocking(move || svc.post_message(&id, &text, &mut |_| {})).await?;
        return Ok(Json(reply).into_response());
    }

    let (tx, mut rx) = mpsc::unbounded_channel();
    tokio::task::spawn_blocking(move || {
        let reply = svc.post_message(&id, &text, &mut |t| {
            let _ = tx.send(Progress::Token(t.to_string()));
        });
        let _ = tx.send(Progress::Done(reply));
    });
    // Failures before the first token become a plain error response, so
    // clients see a real status code for unknown sessions and outages.
    let first = rx.recv().await.ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "worker vanished"))?;
    if let Progress::Done(Err(e)) = first {
        return Err(e.into());
    }
    let events = stream::once(async move { first })
        .chain(stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|p| (p, rx)) }))
        .flat_map(|p| stream::iter(progress_events(p)));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

#[derive(Serialize)]
struct DoneEvent<'a> {
    record_id: &'a str,
    turn_index: usize,
    usage: admitqa::service::TokenUsage,
    latency_ms: f64,
    first_token_ms: f64,
    refused: bool,
    kind: admitqa::engine::OutcomeKind,
    agent: admitqa::agents::Intent,
}

fn event(name: &str, data: &impl Serialize) -> Result<Event, Infallible> {
    Ok(Event::default().event(name).json_data(data).expect("event payloads serialize"))
}

fn progress_events(p: Progress) -> Vec<Result<Event, Infallible>> {
    match p {
        Progress::Token(t) => vec![event("token", &json!({ "text": t }))],
        Progress::Done(Ok(r)) => {
            let mut out: Vec<_> = r.citations.iter().map(|c| event("citation", c)).collect();
            out.push(event(
                "done",
                &DoneEvent {
                    record_id: &r.record_id,
                    turn_index: r.turn_index,
                    usage: r.usage,
                    latency_ms: r.latency_ms,
                    first_token_ms: r.first_token_ms,
                    refused: r.refused,
                    kind: r.kind,
                    agent: r.agent,
                },
            ));
            out
        }
        Progress::Done(Err(e)) => {
            let e = ApiError::from(e);
            vec![event("error", &json!({ "error": e.message, "retryable": e.retryable }))]
        }
    }
}

async fn get_unit(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id: UnitId = id.parse().map_err(|e| ApiError::bad_request(format!("{e}")))?;
    state.service.unit(id).map(Json).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown unit {id}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: Verdict,
    #[serde(default)]
    rater: Option<String>,
}

async fn set_verdict(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let VerdictBody { verdict, rater } = parse_body(&body)?;
    if verdict == Verdict::Unrated {
        return Err(ApiError::bad_request("verdict must be correct or incorrect"));
    }
    Ok(Json(state.service.set_verdict(&id, verdict, rater)?))
}

fn date_param(q: &HashMap<String, String>, key: &str) -> ApiResult<NaiveDate> {
    let raw = q.get(key).ok_or_else(|| ApiError::bad_request(format!("missing `{key}`")))?;
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| ApiError::bad_request(format!("`{key}` must be YYYY-MM-DD")))
}

async fn daily(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<impl IntoResponse> {
    let from = date_param(&q, "from")?;
    let to = date_param(&q, "to")?;
    Ok(Json(json!({ "days": state.service.daily(from, to)? })))
}

async fn cost(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<impl IntoResponse> {
    let model = match q.get("model") {
        Some(m) => m.clone(),
        None => state.service.engine().provider().model().to_string(),
    };
    Ok(Json(state.service.cost(&model)?))
}

async fn ingest(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let Some(src) = state.sources.clone() else {
        return Err(ApiError::bad_request("no corpus configured for ingest"));
    };
    let svc = state.service.clone();
    let cfg = state.config.clone();
    let summary = blocking(move || {
        let summary = svc.reingest(|| build_index(&cfg, &src.corpus, &src.faq))?;
        if let Some(dir) = &src.snapshot_dir {
            svc.save_index(dir).map_err(|e| ServiceError::Ingest(e.to_string()))?;
        }
        Ok(summary)
    })
    .await?;
    Ok(Json(summary))
}

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.service.health())
}
