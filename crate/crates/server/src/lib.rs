//! HTTP API over a shared [`Engine`].
//!
//! Every handler validates its input, hands the work to the engine on the
//! blocking pool and maps the result to JSON. Errors use one body shape,
//! `{"error": kind, "message": text}`.

mod error;

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Request, State};
use axum::http::{header, HeaderValue, Method};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chronomem::ingestion::IngestReport;
use chronomem::memory_graph::{NodeId, TimeWindow};
use chronomem::orchestrator::{GraphView, NodeHit, SessionRecord, TurnEntry};
use chronomem::{AnswerBundle, Engine, EngineError, Event, Timestamp};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;

pub use error::{ApiError, ErrorBody};

pub const DEFAULT_NODE_LIMIT: usize = 20;
pub const DEFAULT_HOPS: usize = 1;

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct ApiJson<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct ApiQuery<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct ApiPath<T>(T);

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSessionRequest {
    session_id: Option<String>,
    ts: Option<Timestamp>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageRequest {
    text: String,
    ts: Option<Timestamp>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRequest {
    name: String,
    text: String,
    ts: Option<Timestamp>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodesQuery {
    q: Option<String>,
    from: Option<Timestamp>,
    to: Option<Timestamp>,
    limit: Option<usize>,
    now: Option<Timestamp>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HopsQuery {
    hops: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsQuery {
    since_seq: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
}

#[derive(Debug, Serialize)]
struct Transcript {
    session_id: String,
    turns: Vec<TurnEntry>,
}

pub fn now_ms() -> Timestamp {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(1, |d| d.as_millis() as Timestamp)
}

/// Routes under `/v1`, with CORS and bearer-token checks taken from the
/// engine's configuration.
pub fn router(engine: Arc<Engine>) -> Router {
    let config = engine.config();
    let token = config.bearer_token.as_deref().map(Arc::from);
    let cors = config.cors_origin.as_deref().and_then(|o| HeaderValue::from_str(o).ok()).map(|origin| {
        CorsLayer::new()
            .allow_origin(AllowOrigin::exact(origin))
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION])
    });
    let state = AppState { engine, token };

    let protected = Router::new()
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/messages", get(list_messages).post(post_message))
        .route("/v1/graph/nodes", get(graph_nodes))
        .route("/v1/graph/nodes/{id}/neighborhood", get(neighborhood))
        .route("/v1/events", get(events))
        .route("/v1/ingest", axum::routing::post(ingest))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));

    let app = Router::new()
        .route("/v1/health", get(health))
        .merge(protected)
        .fallback(|| async { ApiError::not_found("not_found", "no such route") })
        .with_state(state)
        .layer(TraceLayer::new_for_http());
    match cors {
        Some(cors) => app.layer(cors),
        None => app,
    }
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, listener: TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(request).await
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn positive_ts(ts: Option<Timestamp>) -> Result<Timestamp, ApiError> {
    match ts {
        None => Ok(now_ms()),
        Some(t) if t > 0 => Ok(t),
        Some(t) => Err(ApiError::unprocessable("invalid_timestamp", format!("timestamp must be positive, got {t}"))),
    }
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok" })
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionRecord>> {
    Json(state.engine.sessions())
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Json<SessionRecord>, ApiError> {
    let request: CreateSessionRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSessionRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    if request.session_id.as_deref().is_some_and(|id| id.trim().is_empty()) {
        return Err(ApiError::unprocessable("invalid_session_id", "session_id is empty"));
    }
    let ts = positive_ts(request.ts)?;
    Ok(Json(state.engine.create_session(request.session_id, ts)))
}

async fn get_session(
    State(state): State<AppState>,
    ApiPath(id): ApiPath<String>,
) -> Result<Json<SessionRecord>, ApiError> {
    state.engine.session(&id).map(Json).ok_or_else(|| ApiError::from(EngineError::UnknownSession(id)))
}

async fn list_messages(
    State(state): State<AppState>,
    ApiPath(id): ApiPath<String>,
) -> Result<Json<Transcript>, ApiError> {
    let turns = state.engine.session_turns(&id).ok_or_else(|| EngineError::UnknownSession(id.clone()))?;
    Ok(Json(Transcript { session_id: id, turns }))
}

async fn post_message(
    State(state): State<AppState>,
    ApiPath(id): ApiPath<String>,
    ApiJson(request): ApiJson<MessageRequest>,
) -> Result<Json<AnswerBundle>, ApiError> {
    if state.engine.session(&id).is_none() {
        return Err(EngineError::UnknownSession(id).into());
    }
    if request.text.trim().is_empty() {
        return Err(EngineError::EmptyText.into());
    }
    let ts = positive_ts(request.ts)?;
    blocking(&state, move |engine| engine.answer(&id, &request.text, ts)).await.map(Json)
}

async fn graph_nodes(
    State(state): State<AppState>,
    ApiQuery(query): ApiQuery<NodesQuery>,
) -> Result<Json<Vec<NodeHit>>, ApiError> {
    let limit = query.limit.unwrap_or(DEFAULT_NODE_LIMIT);
    if limit == 0 {
        return Err(ApiError::bad_request("limit must be at least 1"));
    }
    let window = match (query.from, query.to) {
        (None, None) => None,
        (from, to) => {
            let window = TimeWindow { from: from.unwrap_or(Timestamp::MIN), to: to.unwrap_or(Timestamp::MAX) };
            if window.from > window.to {
                return Err(ApiError::bad_request("from must not exceed to"));
            }
            Some(window)
        }
    };
    let now = match query.now {
        Some(t) if t <= 0 => return Err(ApiError::bad_request("now must be positive")),
        Some(t) => t,
        None => now_ms(),
    };
    let q = query.q.filter(|q| !q.trim().is_empty());
    blocking(&state, move |engine| engine.query_graph(q.as_deref(), now, window, limit)).await.map(Json)
}

async fn neighborhood(
    State(state): State<AppState>,
    ApiPath(id): ApiPath<NodeId>,
    ApiQuery(query): ApiQuery<HopsQuery>,
) -> Result<Json<GraphView>, ApiError> {
    let hops = query.hops.unwrap_or(DEFAULT_HOPS);
    blocking(&state, move |engine| engine.neighborhood(id, hops)).await.map(Json)
}

async fn events(State(state): State<AppState>, ApiQuery(query): ApiQuery<EventsQuery>) -> Json<Vec<Event>> {
    Json(state.engine.events_since(query.since_seq.unwrap_or(0)))
}

async fn ingest(
    State(state): State<AppState>,
    ApiJson(request): ApiJson<IngestRequest>,
) -> Result<Json<IngestReport>, ApiError> {
    let ts = positive_ts(request.ts)?;
    blocking(&state, move |engine| engine.ingest_document(&request.name, &request.text, ts)).await.map(Json)
}
