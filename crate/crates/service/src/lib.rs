//! HTTP surface over the session store: sessions, dataset upload, messages,
//! live step events, artifacts and benchmark tables. All routes live under
//! `/api`.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::Stream;
use lads_core::bench::{read_quartiles, read_rows, BenchError, BenchmarkRow, Quartiles, SummaryTable};
use lads_core::dataset::{profile, ColumnProfile, DatasetError};
use lads_core::session::{ArtifactRecord, SessionHandle, SessionSummary, Status};
use lads_core::{summarize, EventLog, SessionError, SessionStore, StepEvent};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::io::AsyncWriteExt;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;
pub const PREVIEW_ROWS: usize = 20;
const UPLOAD_DIR: &str = "uploads";
const EVENT_POLL: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub results_path: PathBuf,
    pub quartiles_path: Option<PathBuf>,
    pub max_upload_bytes: usize,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            results_path: PathBuf::from(lads_core::bench::RESULTS_FILE),
            quartiles_path: None,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
        }
    }
}

struct Inner {
    store: SessionStore,
    config: ApiConfig,
    /// (session id, client turn id) to the turn id already issued.
    issued_turns: Mutex<HashMap<(String, String), String>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(store: SessionStore, config: ApiConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                config,
                issued_turns: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        Ok(self.inner.store.get(id)?)
    }

    fn workdir(&self, id: &str) -> PathBuf {
        self.inner.store.config().workdir_root.join(id)
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::StoreUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::TurnInProgress | SessionError::SessionEnded | SessionError::NothingToAnswer => {
                StatusCode::CONFLICT
            }
            SessionError::EmptyQuery => StatusCode::BAD_REQUEST,
            SessionError::Dataset(DatasetError::UnsupportedFormat(_)) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            SessionError::Dataset(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<BenchError> for ApiError {
    fn from(e: BenchError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<MultipartError> for ApiError {
    fn from(e: MultipartError) -> Self {
        Self::new(e.status(), e.body_text())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let upload_limit = state.inner.config.max_upload_bytes;
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route(
            "/api/sessions/{id}/dataset",
            post(upload_dataset).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/events", get(stream_events))
        .route("/api/sessions/{id}/artifacts", get(get_artifacts))
        .route("/api/sessions/{id}/files/{*path}", get(get_file))
        .route("/api/benchmark", get(get_benchmark))
        .with_state(state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiSession {
    pub id: String,
    pub created_at: String,
    pub status: Status,
}

async fn create_session(State(state): State<AppState>) -> ApiResult<(StatusCode, Json<ApiSession>)> {
    let handle = state.store().create()?;
    let s = handle.summary();
    tracing::info!(session = %s.session_id, "session created");
    Ok((
        StatusCode::CREATED,
        Json(ApiSession {
            id: s.session_id,
            created_at: s.created_at,
            status: s.status,
        }),
    ))
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    Ok(Json(state.session(&id)?.summary()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub file_name: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub columns: Vec<String>,
    pub preview: Vec<Vec<String>>,
    pub profiles: Vec<ColumnProfile>,
}

/// Keeps the base name's safe characters; `None` when nothing usable is left.
fn safe_file_name(raw: &str) -> Option<String> {
    let base = raw.rsplit(['/', '\\']).next().unwrap_or_default();
    let cleaned: String = base
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        .collect();
    let cleaned = cleaned.trim_start_matches('.').to_string();
    (!cleaned.is_empty()).then_some(cleaned)
}

async fn upload_dataset(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    mut multipart: Multipart,
) -> ApiResult<Json<DatasetSummary>> {
    let handle = state.session(&id)?;
    if handle.summary().status == Status::Ended {
        return Err(SessionError::SessionEnded.into());
    }
    let dir = state.workdir(&id).join(UPLOAD_DIR);
    tokio::fs::create_dir_all(&dir).await?;
    let mut saved: Option<PathBuf> = None;
    while let Some(mut field) = multipart.next_field().await? {
        if field.name() != Some("file") {
            continue;
        }
        let name = field
            .file_name()
            .and_then(safe_file_name)
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "the file part needs a file name"))?;
        let path = dir.join(name);
        let mut out = tokio::fs::File::create(&path).await?;
        let copied = async {
            while let Some(chunk) = field.chunk().await? {
                out.write_all(&chunk).await?;
            }
            out.flush().await?;
            Ok::<(), ApiError>(())
        }
        .await;
        if let Err(e) = copied {
            let _ = tokio::fs::remove_file(&path).await;
            return Err(e);
        }
        saved = Some(path);
        break;
    }
    let path = saved.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing multipart field `file`"))?;
    let bound = {
        let handle = Arc::clone(&handle);
        let path = path.clone();
        tokio::task::spawn_blocking(move || handle.bind_dataset(&path))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    };
    let table = match bound {
        Ok(t) => t,
        Err(e) => {
            let _ = tokio::fs::remove_file(&path).await;
            return Err(e.into());
        }
    };
    let eda = profile(&table);
    Ok(Json(DatasetSummary {
        file_name: table.file_name(),
        n_rows: table.n_rows,
        n_cols: table.n_cols,
        columns: table.header().to_vec(),
        preview: table.rows().iter().take(PREVIEW_ROWS).cloned().collect(),
        profiles: eda.columns,
    }))
}

#[derive(Debug, Clone, Deserialize)]
pub struct MessageRequest {
    #[serde(default)]
    pub text: String,
    /// Client-chosen id; a retried request with the same id starts no new turn.
    #[serde(default)]
    pub turn_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnAccepted {
    pub session_id: String,
    pub turn_id: String,
    pub duplicate: bool,
}

async fn post_message(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<MessageRequest>>,
) -> ApiResult<(StatusCode, Json<TurnAccepted>)> {
    let handle = state.session(&id)?;
    let Some(Json(req)) = body else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "expected a JSON body with `text`",
        ));
    };
    if req.text.trim().is_empty() {
        return Err(SessionError::EmptyQuery.into());
    }
    let key = req.turn_id.clone().map(|t| (id.clone(), t));
    if let Some(key) = &key {
        if let Some(turn_id) = state.inner.issued_turns.lock().unwrap().get(key) {
            return Ok((
                StatusCode::ACCEPTED,
                Json(TurnAccepted {
                    session_id: id,
                    turn_id: turn_id.clone(),
                    duplicate: true,
                }),
            ));
        }
    }
    let ticket = handle.begin_turn(&req.text)?;
    if let Some(key) = key {
        state
            .inner
            .issued_turns
            .lock()
            .unwrap()
            .insert(key, ticket.turn_id.clone());
    }
    let accepted = TurnAccepted {
        session_id: id,
        turn_id: ticket.turn_id.clone(),
        duplicate: false,
    };
    tokio::task::spawn_blocking(move || match handle.run_turn(&ticket) {
        Ok(r) => tracing::info!(turn = %ticket.turn_id, decision = ?r.decision, verdict = ?r.verdict, "turn finished"),
        Err(e) => tracing::warn!(turn = %ticket.turn_id, error = %e, "turn failed"),
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub from: u64,
}

/// Replays events from `from` and then follows the log.
pub fn event_stream(log: Arc<EventLog>, from: u64) -> impl Stream<Item = StepEvent> {
    futures_util::stream::unfold(
        (log, from, VecDeque::new()),
        |(log, mut next, mut buffered)| async move {
            loop {
                if let Some(event) = buffered.pop_front() {
                    return Some((event, (log, next, buffered)));
                }
                let reader = Arc::clone(&log);
                let batch = tokio::task::spawn_blocking(move || reader.wait_since(next, EVENT_POLL))
                    .await
                    .unwrap_or_default();
                next += batch.len() as u64;
                buffered.extend(batch);
            }
        },
    )
}

async fn stream_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let handle = state.session(&id)?;
    let stream = futures_util::StreamExt::map(event_stream(Arc::clone(handle.events()), q.from), |e| {
        let data = serde_json::to_string(&e).expect("events serialize");
        Ok(Event::default().id(e.seq.to_string()).event("step").data(data))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactView {
    #[serde(flatten)]
    pub record: ArtifactRecord,
    pub code: Option<String>,
    pub report_markdown: Option<String>,
    pub code_url: Option<String>,
    pub report_url: Option<String>,
    pub predictions_url: Option<String>,
    pub inference_files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactsResponse {
    pub session_id: String,
    pub status: Status,
    pub artifacts: Vec<ArtifactView>,
}

fn file_url(session: &str, workdir: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(workdir).ok()?;
    path.exists()
        .then(|| format!("/api/sessions/{session}/files/{}", rel.to_string_lossy()))
}

fn artifact_view(session: &str, workdir: &Path, record: ArtifactRecord) -> ArtifactView {
    let read = |p: &Path| std::fs::read_to_string(p).ok();
    let mut inference_files = Vec::new();
    if let Some(dir) = &record.inference_package {
        if let Ok(entries) = std::fs::read_dir(dir) {
            let mut names: Vec<PathBuf> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
            names.sort();
            inference_files = names.iter().filter_map(|p| file_url(session, workdir, p)).collect();
        }
    }
    ArtifactView {
        code: read(&record.code_path),
        report_markdown: record.report.as_deref().and_then(read),
        code_url: file_url(session, workdir, &record.code_path),
        report_url: record.report.as_deref().and_then(|p| file_url(session, workdir, p)),
        predictions_url: record
            .predictions
            .as_deref()
            .and_then(|p| file_url(session, workdir, p)),
        inference_files,
        record,
    }
}

async fn get_artifacts(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<ArtifactsResponse>> {
    let summary = state.session(&id)?.summary();
    let workdir = state.workdir(&id).canonicalize()?;
    let artifacts = summary
        .artifacts
        .into_iter()
        .map(|r| artifact_view(&id, &workdir, r))
        .collect();
    Ok(Json(ArtifactsResponse {
        session_id: id,
        status: summary.status,
        artifacts,
    }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("md") => "text/markdown; charset=utf-8",
        Some("csv") => "text/csv; charset=utf-8",
        Some("py") => "text/x-python; charset=utf-8",
        Some("json") | Some("jsonl") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn get_file(State(state): State<AppState>, UrlPath((id, rel)): UrlPath<(String, String)>) -> ApiResult<Response> {
    state.session(&id)?;
    let root = state.workdir(&id).canonicalize()?;
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no file `{rel}`"));
    let path = root.join(&rel).canonicalize().map_err(|_| not_found())?;
    if !path.starts_with(&root) || !path.is_file() {
        return Err(not_found());
    }
    let bytes = tokio::fs::read(&path).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResponse {
    pub rows: Vec<BenchmarkRow>,
    pub summary: SummaryTable,
    pub markdown: String,
}

async fn get_benchmark(State(state): State<AppState>) -> ApiResult<Json<BenchmarkResponse>> {
    let config = state.inner.config.clone();
    let rows = if config.results_path.exists() {
        read_rows(&config.results_path)?
    } else {
        Vec::new()
    };
    let quartiles: Option<std::collections::BTreeMap<String, Quartiles>> =
        config.quartiles_path.as_deref().map(read_quartiles).transpose()?;
    let summary = summarize(&rows, quartiles.as_ref());
    let markdown = if rows.is_empty() {
        String::new()
    } else {
        summary.render()
    };
    Ok(Json(BenchmarkResponse {
        rows,
        summary,
        markdown,
    }))
}

/// Serves until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
