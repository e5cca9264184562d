//! HTTP surface for sessions.
//!
//! Every session's event log is served as server-sent events. Each event's
//! `id` is its seq, so a client resumes with `?from=<last seq>` or the
//! standard `Last-Event-ID` header and loses or repeats nothing.

use std::collections::{BTreeSet, HashMap};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use graphologue_core::annotation::EntityId;
use graphologue_core::graph::{ExportFormat, SaliencyFilter, ViewScope};
use graphologue_session::{EventLog, FollowupKind, Op, Session, SessionError, WireEvent};
use graphologue_transport::{Mode, Transport, TransportConfig};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Template for every session's transport. In Replay and Record mode
    /// the fixture path is chosen per session from `fixture_dir`.
    pub transport: TransportConfig,
    /// Replay reads `<dir>/<slug>.ndjson`, falling back to
    /// `<dir>/default.ndjson`; Record writes `<dir>/<slug>.ndjson`.
    pub fixture_dir: Option<PathBuf>,
    /// When set, each session's log is also appended to `<dir>/<id>.ndjson`.
    pub log_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl ServerConfig {
    pub fn new(transport: TransportConfig) -> Self {
        Self { transport, fixture_dir: None, log_dir: None, cors_origin: None }
    }
}

/// File-name form of a question: lowercase ASCII words joined by dashes.
pub fn slug(question: &str) -> String {
    question
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

#[derive(Debug)]
pub struct AppState {
    config: ServerConfig,
    sessions: RwLock<HashMap<String, Session>>,
    shared: Option<Arc<Transport>>,
}

impl AppState {
    /// Checks the configuration. Live mode builds its transport up front, so
    /// a missing key fails here.
    pub fn new(config: ServerConfig) -> Result<Self, String> {
        let shared = match config.transport.mode {
            Mode::Live => Some(Arc::new(Transport::new(config.transport.clone()).map_err(|e| e.to_string())?)),
            Mode::Replay | Mode::Record if config.fixture_dir.is_none() => {
                return Err("replay and record modes need a fixture directory".into());
            }
            _ => None,
        };
        Ok(Self { config, sessions: RwLock::new(HashMap::new()), shared })
    }

    fn transport_for(&self, question: &str) -> Result<Arc<Transport>, String> {
        if let Some(t) = &self.shared {
            return Ok(t.clone());
        }
        let dir = self.config.fixture_dir.as_ref().expect("checked in new");
        let own = dir.join(format!("{}.ndjson", slug(question)));
        let path = match self.config.transport.mode {
            Mode::Replay if !own.exists() => dir.join("default.ndjson"),
            _ => own,
        };
        let config = TransportConfig { fixture: Some(path), ..self.config.transport.clone() };
        Transport::new(config).map(Arc::new).map_err(|e| e.to_string())
    }

    fn session(&self, id: &str) -> Result<Session, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict(_) | SessionError::InvalidTarget(_) => StatusCode::CONFLICT,
            SessionError::Transport(_) => StatusCode::BAD_GATEWAY,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match state.config.cors_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => cors.allow_origin(AllowOrigin::exact(origin)),
        _ => cors.allow_origin(Any),
    };
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/nodes/{nid}/{action}", post(node_action))
        .route("/sessions/{id}/nodes/{a}/merge-into/{b}", post(merge))
        .route("/sessions/{id}/paragraphs/{k}/more", post(more))
        .route("/sessions/{id}/add-paragraph", post(add_paragraph))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/export", get(export))
        .layer(cors)
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(config: ServerConfig, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let state = AppState::new(config).map_err(std::io::Error::other)?;
    axum::serve(listener, router(Arc::new(state))).await
}

#[derive(Debug, Deserialize)]
struct NewSession {
    question: String,
}

fn request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

async fn create_session(State(app): State<Arc<AppState>>, Json(body): Json<NewSession>) -> Result<Response, ApiError> {
    if body.question.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "question is empty".into()));
    }
    let transport = app.transport_for(&body.question).map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let log = match &app.config.log_dir {
        Some(dir) => EventLog::persisted(&dir.join(format!("{id}.ndjson")))
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
        None => EventLog::new(),
    };
    let session = Session::spawn(id.clone(), transport, Arc::new(log));
    app.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), session.clone());
    let rid = request_id();
    match session.run(Op::Ask(body.question), Some(rid.clone())).await {
        Ok(()) => Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "request_id": rid })))
            .into_response()),
        Err(e) => {
            let err = ApiError::from(e);
            Ok((err.0, Json(json!({ "session_id": id, "request_id": rid, "error": err.1 }))).into_response())
        }
    }
}

async fn snapshot(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    Ok(Json(session.read(|s| s.snapshot()).await).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
    /// Keep the stream open for new events (default); `false` ends it once
    /// the current log is sent.
    follow: Option<bool>,
}

fn sse_event(e: &WireEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.payload.type_name())
        .data(serde_json::to_string(e).expect("events serialize"))
}

/// Events after `from`, then (when following) every new one as it lands.
pub fn event_stream(log: Arc<EventLog>, from: u64, follow: bool) -> impl Stream<Item = WireEvent> + Send {
    let notify = log.subscribe();
    futures::stream::unfold((log, from, notify, false), move |(log, cursor, mut notify, done)| async move {
        if done {
            return None;
        }
        loop {
            let batch = log.since(cursor);
            if let Some(last) = batch.last().map(|e| e.seq) {
                return Some((batch, (log, last, notify, !follow)));
            }
            if !follow || notify.changed().await.is_err() {
                return None;
            }
        }
    })
    .flat_map(futures::stream::iter)
}

async fn events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = app.session(&id)?;
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let from = q.from.or(last_event_id).unwrap_or(0);
    let stream = event_stream(session.log().clone(), from, q.follow.unwrap_or(true)).map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

fn parse_node(raw: &str) -> Result<EntityId, ApiError> {
    let digits = raw.trim_start_matches('$').trim_start_matches(['N', 'n']);
    digits
        .parse::<u32>()
        .ok()
        .and_then(EntityId::new)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no node {raw}")))
}

fn accepted(rid: String) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "request_id": rid }))).into_response()
}

async fn run(session: &Session, op: Op) -> Result<Response, ApiError> {
    let rid = request_id();
    session.run(op, Some(rid.clone())).await?;
    Ok(accepted(rid))
}

async fn node_action(
    State(app): State<Arc<AppState>>,
    Path((id, nid, action)): Path<(String, String, String)>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let node = parse_node(&nid)?;
    let op = match action.as_str() {
        "explain" => Op::Followup(node, FollowupKind::Explain),
        "examples" => Op::Followup(node, FollowupKind::Examples),
        "trim" => Op::Trim(node),
        "collapse" => Op::Collapse(node),
        "expand" => Op::Expand(node),
        other => return Err(ApiError(StatusCode::NOT_FOUND, format!("no node action {other}"))),
    };
    run(&session, op).await
}

async fn merge(
    State(app): State<Arc<AppState>>,
    Path((id, a, b)): Path<(String, String, String)>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let (from, into) = (parse_node(&a)?, parse_node(&b)?);
    run(&session, Op::Merge { from, into }).await
}

async fn more(State(app): State<Arc<AppState>>, Path((id, k)): Path<(String, usize)>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    run(&session, Op::TellMeMore(k)).await
}

async fn add_paragraph(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    run(&session, Op::AddParagraph).await
}

#[derive(Debug, Deserialize)]
struct GraphQuery {
    view: Option<String>,
    saliency: Option<String>,
    show: Option<String>,
}

fn bad(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, message.into())
}

async fn graph(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<GraphQuery>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let filter = match q.saliency.as_deref().unwrap_or("high") {
        "high" => SaliencyFilter::HighOnly,
        "all" => SaliencyFilter::All,
        other => return Err(bad(format!("saliency must be high or all, not {other}"))),
    };
    let shown: Option<BTreeSet<usize>> = match q.show.as_deref().filter(|s| !s.is_empty()) {
        Some(list) => Some(
            list.split(',')
                .map(|k| k.trim().parse::<usize>().map_err(|_| bad(format!("bad paragraph index {k:?}"))))
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };
    let view = q.view.unwrap_or_else(|| "merged".into());
    let result = session
        .read(move |s| {
            let all: BTreeSet<usize> = s.graph().paragraphs().collect();
            let scope = match view.as_str() {
                "merged" => ViewScope::Merged(shown.unwrap_or(all)),
                "split" => match shown.map(|s| s.into_iter().collect::<Vec<_>>()).as_deref() {
                    None => ViewScope::Split(0),
                    Some([k]) => ViewScope::Split(*k),
                    Some(_) => return Err(bad("split view shows exactly one paragraph")),
                },
                other => return Err(bad(format!("view must be split or merged, not {other}"))),
            };
            s.view(filter, &scope).map_err(ApiError::from)
        })
        .await?;
    Ok(Json(result).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let (format, mime) = match q.format.as_deref().unwrap_or("json") {
        "json" => (ExportFormat::GraphJson, "application/json"),
        "dot" => (ExportFormat::Dot, "text/vnd.graphviz"),
        other => return Err(bad(format!("format must be json or dot, not {other}"))),
    };
    let body = session.read(move |s| s.export(format)).await;
    Ok(([(header::CONTENT_TYPE, mime)], body).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("How do earthquakes happen?"), "how-do-earthquakes-happen");
        assert_eq!(slug("  What's  an EV? "), "what-s-an-ev");
    }

    #[tokio::test]
    async fn stream_resumes_after_cursor() {
        let log = Arc::new(EventLog::new());
        for _ in 0..4 {
            log.push(None, graphologue_session::Payload::RequestComplete { ok: true });
        }
        let seqs: Vec<u64> = event_stream(log.clone(), 2, false).map(|e| e.seq).collect().await;
        assert_eq!(seqs, [3, 4]);

        let mut live = Box::pin(event_stream(log.clone(), 4, true));
        let pusher = log.clone();
        tokio::spawn(async move { pusher.push(None, graphologue_session::Payload::RequestComplete { ok: false }) });
        assert_eq!(live.next().await.map(|e| e.seq), Some(5));
    }
}
