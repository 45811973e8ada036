//! The endpoint table and its handlers. The router and the published
//! endpoint description are both built from [`ENDPOINTS`].

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{on, MethodFilter, MethodRouter};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use comodeler_core::classify::{LiveFrame, LiveSession, TestSampleView};
use comodeler_core::event::{EventDraft, EventPayload};
use comodeler_core::game::{GameSummary, GameView};
use comodeler_core::sync::{PullResponse, SyncCursor};
use comodeler_core::{
    BlobHash, ClassificationResult, CoreError, DatasetReport, EventRecord, GameId, Label, LabelId, ProjectId,
    ProjectState, ProjectSummary, SampleId, TestSample, TestSampleId,
};
use futures::StreamExt;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::wire::*;
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

/// Idle event streams send a blank line this often so dead connections are
/// noticed. Clients skip blank lines.
pub const HEARTBEAT: Duration = Duration::from_secs(15);

pub const NDJSON: &str = "application/x-ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Health,
    Describe,
    ListProjects,
    CreateProject,
    GetProject,
    AddLabel,
    RenameLabel,
    DeleteLabel,
    UploadSample,
    DeleteSample,
    Report,
    Train,
    GetModel,
    Classify,
    LiveClassify,
    TestDashboard,
    SetExpectedLabel,
    DeleteTestSample,
    PullEvents,
    StreamEvents,
    GetBlob,
    StartGame,
    GetGame,
    SubmitFrame,
    AdvanceGame,
    GameSummary,
    HighScore,
    Export,
    Import,
}

#[derive(Debug, Clone, Copy)]
pub struct Endpoint {
    pub method: &'static str,
    pub path: &'static str,
    pub op: Op,
    pub summary: &'static str,
}

const fn ep(method: &'static str, path: &'static str, op: Op, summary: &'static str) -> Endpoint {
    Endpoint { method, path, op, summary }
}

pub const ENDPOINTS: &[Endpoint] = &[
    ep("GET", "/health", Op::Health, "Liveness probe."),
    ep("GET", "/openapi.json", Op::Describe, "This endpoint table as an OpenAPI document."),
    ep("GET", "/projects", Op::ListProjects, "List projects."),
    ep("POST", "/projects", Op::CreateProject, "Create a project. Body: {name}."),
    ep("GET", "/projects/{project_id}", Op::GetProject, "Full project state."),
    ep("POST", "/projects/{project_id}/labels", Op::AddLabel, "Add a label. Body: {name}."),
    ep("PATCH", "/projects/{project_id}/labels/{label_id}", Op::RenameLabel, "Rename a label. Body: {name}."),
    ep("DELETE", "/projects/{project_id}/labels/{label_id}", Op::DeleteLabel, "Delete a label."),
    ep(
        "POST",
        "/projects/{project_id}/samples",
        Op::UploadSample,
        "Upload a training image. Multipart fields: image, label_id, optional dedupe_key.",
    ),
    ep("DELETE", "/projects/{project_id}/samples/{sample_id}", Op::DeleteSample, "Delete a training sample."),
    ep("GET", "/projects/{project_id}/report", Op::Report, "Live sample counts per label."),
    ep("POST", "/projects/{project_id}/train", Op::Train, "Train a new model version."),
    ep("GET", "/projects/{project_id}/model", Op::GetModel, "Current model summary."),
    ep(
        "POST",
        "/projects/{project_id}/classify",
        Op::Classify,
        "Photo mode. Raw image body, optional ?expected_label_id=. Kept as test data.",
    ),
    ep(
        "POST",
        "/projects/{project_id}/live",
        Op::LiveClassify,
        "Live mode. NDJSON frames {at_ms, image} in, NDJSON results out (at most 5 per second).",
    ),
    ep("GET", "/projects/{project_id}/tests", Op::TestDashboard, "Test samples, misclassified first."),
    ep(
        "PUT",
        "/projects/{project_id}/tests/{test_sample_id}/expected",
        Op::SetExpectedLabel,
        "Set or clear the expected label. Body: {label_id}.",
    ),
    ep("DELETE", "/projects/{project_id}/tests/{test_sample_id}", Op::DeleteTestSample, "Delete a test sample."),
    ep("GET", "/projects/{project_id}/events", Op::PullEvents, "Events after ?since=N."),
    ep(
        "GET",
        "/projects/{project_id}/events/stream",
        Op::StreamEvents,
        "NDJSON stream of events after ?since=N, then live events.",
    ),
    ep("GET", "/blobs/{hash}", Op::GetBlob, "Image or model bytes by SHA-256."),
    ep(
        "POST",
        "/projects/{project_id}/games",
        Op::StartGame,
        "Start a game. Body: {seed, duration_s, round_s, clock}, all optional.",
    ),
    ep("GET", "/games/{game_id}", Op::GetGame, "Game state."),
    ep("POST", "/games/{game_id}/frames", Op::SubmitFrame, "Classify a frame for ?round=N. Raw image body."),
    ep("POST", "/games/{game_id}/advance", Op::AdvanceGame, "Advance a simulated clock. Body: {ms}."),
    ep("GET", "/games/{game_id}/summary", Op::GameSummary, "Score summary of a finished game."),
    ep("GET", "/projects/{project_id}/highscore", Op::HighScore, "Best game total for the project."),
    ep("GET", "/projects/{project_id}/export", Op::Export, "Export the project with base64 blobs."),
    ep("POST", "/import", Op::Import, "Import an exported project."),
];

fn filter(method: &str) -> MethodFilter {
    match method {
        "GET" => MethodFilter::GET,
        "POST" => MethodFilter::POST,
        "PUT" => MethodFilter::PUT,
        "PATCH" => MethodFilter::PATCH,
        "DELETE" => MethodFilter::DELETE,
        other => panic!("unsupported method {other}"),
    }
}

fn method_router(e: &Endpoint) -> MethodRouter<AppState> {
    let f = filter(e.method);
    match e.op {
        Op::Health => on(f, health),
        Op::Describe => on(f, describe),
        Op::ListProjects => on(f, list_projects),
        Op::CreateProject => on(f, create_project),
        Op::GetProject => on(f, get_project),
        Op::AddLabel => on(f, add_label),
        Op::RenameLabel => on(f, rename_label),
        Op::DeleteLabel => on(f, delete_label),
        Op::UploadSample => on(f, upload_sample),
        Op::DeleteSample => on(f, delete_sample),
        Op::Report => on(f, report),
        Op::Train => on(f, train),
        Op::GetModel => on(f, get_model),
        Op::Classify => on(f, classify),
        Op::LiveClassify => on(f, live_classify),
        Op::TestDashboard => on(f, test_dashboard),
        Op::SetExpectedLabel => on(f, set_expected_label),
        Op::DeleteTestSample => on(f, delete_test_sample),
        Op::PullEvents => on(f, pull_events),
        Op::StreamEvents => on(f, stream_events),
        Op::GetBlob => on(f, get_blob),
        Op::StartGame => on(f, start_game),
        Op::GetGame => on(f, get_game),
        Op::SubmitFrame => on(f, submit_frame),
        Op::AdvanceGame => on(f, advance_game),
        Op::GameSummary => on(f, game_summary),
        Op::HighScore => on(f, high_score),
        Op::Export => on(f, export),
        Op::Import => on(f, import),
    }
}

/// Requests that carry whole archives or frame streams.
fn is_bulk(op: Op) -> bool {
    matches!(op, Op::Import | Op::LiveClassify)
}

pub fn router(state: AppState) -> Router {
    let mut by_path: BTreeMap<&str, MethodRouter<AppState>> = BTreeMap::new();
    for e in ENDPOINTS {
        let limit = if is_bulk(e.op) { state.limits.bulk_bytes } else { state.limits.upload_bytes };
        let mr = method_router(e).layer(DefaultBodyLimit::max(limit));
        let merged = match by_path.remove(e.path) {
            Some(existing) => existing.merge(mr),
            None => mr,
        };
        by_path.insert(e.path, merged);
    }
    let mut router = Router::new();
    for (path, mr) in by_path {
        router = router.route(path, mr);
    }
    router.fallback(not_found).with_state(state)
}

/// OpenAPI-style description of [`ENDPOINTS`].
pub fn describe_endpoints() -> Value {
    let mut paths: BTreeMap<&str, serde_json::Map<String, Value>> = BTreeMap::new();
    for e in ENDPOINTS {
        let params: Vec<Value> = e
            .path
            .split('/')
            .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
            .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}}))
            .collect();
        paths.entry(e.path).or_default().insert(
            e.method.to_ascii_lowercase(),
            json!({
                "operationId": format!("{:?}", e.op),
                "summary": e.summary,
                "parameters": params,
            }),
        );
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "comodeler", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
    })
}

/// The endpoint table as Markdown, as shipped in the docs.
pub fn endpoint_table_markdown() -> String {
    let mut out = String::from("| Method | Path | Description |\n|---|---|---|\n");
    for e in ENDPOINTS {
        out.push_str(&format!("| {} | `{}` | {} |\n", e.method, e.path, e.summary));
    }
    out
}

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct ApiJson<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct ApiPath<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct ApiQuery<T>(T);

/// The `X-Author` header, or a default.
struct Author(String);

impl<S: Send + Sync> FromRequestParts<S> for Author {
    type Rejection = Infallible;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let author = parts
            .headers
            .get(AUTHOR_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .unwrap_or(DEFAULT_AUTHOR);
        Ok(Author(author.to_string()))
    }
}

/// Runs CPU-heavy store work off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&comodeler_core::Store) -> Result<T, CoreError> + Send + 'static,
    T: Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn ndjson_line<T: serde::Serialize>(value: &T) -> Bytes {
    let mut line = serde_json::to_vec(value).expect("wire types serialize");
    line.push(b'\n');
    Bytes::from(line)
}

fn ndjson_response(body: Body) -> Response {
    let mut resp = Response::new(body);
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(NDJSON));
    resp
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn describe() -> Json<Value> {
    Json(describe_endpoints())
}

async fn list_projects(State(s): State<AppState>) -> Json<Vec<ProjectSummary>> {
    Json(s.store.list_projects())
}

async fn create_project(
    State(s): State<AppState>,
    ApiJson(req): ApiJson<NameRequest>,
) -> ApiResult<(StatusCode, Json<ProjectState>)> {
    Ok((StatusCode::CREATED, Json(s.store.create_project(&req.name)?)))
}

async fn get_project(State(s): State<AppState>, ApiPath(id): ApiPath<ProjectId>) -> ApiResult<Json<ProjectState>> {
    Ok(Json(s.store.project(id)?))
}

async fn add_label(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath(id): ApiPath<ProjectId>,
    ApiJson(req): ApiJson<NameRequest>,
) -> ApiResult<(StatusCode, Json<Label>)> {
    let label_id = s.store.add_label(id, &req.name, &author)?;
    let state = s.store.project(id)?;
    let label = state.label(label_id).cloned().ok_or(CoreError::LabelNotFound(label_id))?;
    Ok((StatusCode::CREATED, Json(label)))
}

async fn rename_label(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath((id, label_id)): ApiPath<(ProjectId, LabelId)>,
    ApiJson(req): ApiJson<NameRequest>,
) -> ApiResult<Json<EventRecord>> {
    let draft = EventDraft::new(author, EventPayload::LabelRenamed { label_id, name: req.name });
    Ok(Json(s.store.apply_event(id, draft)?))
}

async fn delete_label(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath((id, label_id)): ApiPath<(ProjectId, LabelId)>,
) -> ApiResult<Json<EventRecord>> {
    Ok(Json(s.store.apply_event(id, EventDraft::new(author, EventPayload::LabelDeleted { label_id }))?))
}

async fn upload_sample(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath(id): ApiPath<ProjectId>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<UploadResponse>)> {
    let mut multipart = multipart.map_err(|r| ApiError::bad_request(r.body_text()))?;
    let mut image = None;
    let mut label_id = None;
    let mut dedupe_key = None;
    while let Some(field) = multipart.next_field().await? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await?),
            Some("label_id") => {
                let text = field.text().await?;
                let parsed = text
                    .trim()
                    .parse::<LabelId>()
                    .map_err(|_| ApiError::bad_request(format!("label_id {text:?} is not a label id")))?;
                label_id = Some(parsed);
            }
            Some("dedupe_key") => {
                let text = field.text().await?;
                if !text.is_empty() {
                    dedupe_key = Some(text);
                }
            }
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing multipart field `image`"))?;
    let label_id = label_id.ok_or_else(|| ApiError::bad_request("missing multipart field `label_id`"))?;
    let (sample, created) =
        blocking(&s, move |store| store.add_sample(id, label_id, &image, &author, dedupe_key)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(UploadResponse { sample, created })))
}

async fn delete_sample(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath((id, sample_id)): ApiPath<(ProjectId, SampleId)>,
) -> ApiResult<Json<EventRecord>> {
    Ok(Json(s.store.apply_event(id, EventDraft::new(author, EventPayload::SampleDeleted { sample_id }))?))
}

async fn report(State(s): State<AppState>, ApiPath(id): ApiPath<ProjectId>) -> ApiResult<Json<DatasetReport>> {
    Ok(Json(s.store.dataset_report(id)?))
}

async fn train(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath(id): ApiPath<ProjectId>,
) -> ApiResult<Json<ModelSummary>> {
    let model = blocking(&s, move |store| store.train(id, &author)).await?;
    Ok(Json(ModelSummary::from(&*model)))
}

async fn get_model(State(s): State<AppState>, ApiPath(id): ApiPath<ProjectId>) -> ApiResult<Json<ModelSummary>> {
    Ok(Json(ModelSummary::from(&*s.store.current_model(id)?)))
}

async fn classify(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath(id): ApiPath<ProjectId>,
    ApiQuery(q): ApiQuery<ClassifyQuery>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<(StatusCode, Json<ClassifyResponse>)> {
    let body = body?;
    let (test_sample, result) =
        blocking(&s, move |store| store.photo_classify(id, &body, &author, q.expected_label_id)).await?;
    Ok((StatusCode::CREATED, Json(ClassifyResponse { test_sample, result })))
}

struct LiveStream {
    input: axum::body::BodyDataStream,
    buf: Vec<u8>,
    session: LiveSession,
    max_line: usize,
    ended: bool,
}

impl LiveStream {
    /// Handles one request line; `None` when the throttle drops the frame.
    fn frame(&mut self, line: &[u8]) -> Option<Bytes> {
        if line.iter().all(u8::is_ascii_whitespace) {
            return None;
        }
        let parsed: Result<LiveFrame, ApiError> = serde_json::from_slice::<LiveFrameJson>(line)
            .map_err(|e| ApiError::bad_request(format!("bad frame: {e}")))
            .and_then(|f| {
                let image = STANDARD
                    .decode(f.image.as_bytes())
                    .map_err(|e| ApiError::bad_request(format!("bad frame image: {e}")))?;
                Ok(LiveFrame { at_ms: f.at_ms, image })
            });
        let out = parsed.and_then(|frame| self.session.push(&frame).map_err(ApiError::from));
        match out {
            Ok(Some(result)) => Some(ndjson_line(&result)),
            Ok(None) => None,
            Err(e) => Some(ndjson_line(&ErrorBody {
                error: ErrorDetail { code: e.code.to_string(), message: e.message },
            })),
        }
    }

    async fn next_line(&mut self) -> Option<Bytes> {
        loop {
            if let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = self.buf.drain(..=pos).collect();
                match self.frame(&line[..pos]) {
                    Some(out) => return Some(out),
                    None => continue,
                }
            }
            if self.ended {
                if self.buf.is_empty() {
                    return None;
                }
                let line = std::mem::take(&mut self.buf);
                match self.frame(&line) {
                    Some(out) => return Some(out),
                    None => continue,
                }
            }
            if self.buf.len() > self.max_line {
                self.ended = true;
                self.buf.clear();
                return Some(ndjson_line(&ErrorBody {
                    error: ErrorDetail { code: "PayloadTooLarge".into(), message: "frame line too long".into() },
                }));
            }
            match self.input.next().await {
                Some(Ok(chunk)) => self.buf.extend_from_slice(&chunk),
                Some(Err(_)) => return None,
                None => self.ended = true,
            }
        }
    }
}

async fn live_classify(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<ProjectId>,
    body: Body,
) -> ApiResult<Response> {
    let session = s.store.live_session(id)?;
    let state = LiveStream {
        input: body.into_data_stream(),
        buf: Vec::new(),
        session,
        max_line: s.limits.upload_bytes * 2,
        ended: false,
    };
    let stream = futures::stream::unfold(state, |mut st| async move {
        let line = st.next_line().await?;
        Some((Ok::<_, Infallible>(line), st))
    });
    Ok(ndjson_response(Body::from_stream(stream)))
}

async fn test_dashboard(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<ProjectId>,
) -> ApiResult<Json<Vec<TestSampleView>>> {
    Ok(Json(s.store.test_dashboard(id)?))
}

async fn set_expected_label(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath((id, test_sample_id)): ApiPath<(ProjectId, TestSampleId)>,
    ApiJson(req): ApiJson<ExpectedLabelRequest>,
) -> ApiResult<Json<TestSample>> {
    Ok(Json(s.store.set_expected_label(id, test_sample_id, req.label_id, &author)?))
}

async fn delete_test_sample(
    State(s): State<AppState>,
    Author(author): Author,
    ApiPath((id, test_sample_id)): ApiPath<(ProjectId, TestSampleId)>,
) -> ApiResult<Json<EventRecord>> {
    let draft = EventDraft::new(author, EventPayload::TestSampleDeleted { test_sample_id });
    Ok(Json(s.store.apply_event(id, draft)?))
}

async fn pull_events(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<ProjectId>,
    ApiQuery(q): ApiQuery<SinceQuery>,
) -> ApiResult<Json<PullResponse>> {
    Ok(Json(s.store.pull(SyncCursor { project_id: id, last_seq: q.since })?))
}

async fn stream_events(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<ProjectId>,
    ApiQuery(q): ApiQuery<SinceQuery>,
) -> ApiResult<Response> {
    let sub = s.store.subscribe(SyncCursor { project_id: id, last_seq: q.since })?;
    let stream = futures::stream::unfold(sub, |mut sub| async move {
        match tokio::time::timeout(HEARTBEAT, sub.next()).await {
            Ok(Some(rec)) => Some((Ok::<_, Infallible>(ndjson_line(&rec)), sub)),
            Ok(None) => None,
            Err(_) => Some((Ok(Bytes::from_static(b"\n")), sub)),
        }
    });
    Ok(ndjson_response(Body::from_stream(stream)))
}

fn content_type_of(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.first() == Some(&b'{') {
        "application/json"
    } else {
        "application/octet-stream"
    }
}

async fn get_blob(State(s): State<AppState>, ApiPath(hash): ApiPath<String>) -> ApiResult<Response> {
    let hash: BlobHash = hash.parse().map_err(|e: comodeler_core::ids::InvalidBlobHash| {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidBlobHash", e.to_string())
    })?;
    let bytes = blocking(&s, move |store| store.fetch_blob(&hash)).await?;
    let ct = content_type_of(&bytes);
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

async fn start_game(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<ProjectId>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<(StatusCode, Json<GameView>)> {
    let body = body?;
    let req: StartGameRequest = if body.iter().all(u8::is_ascii_whitespace) {
        StartGameRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad game request: {e}")))?
    };
    let view = s.store.start_game(id, req.config(), req.clock.unwrap_or_default())?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_game(State(s): State<AppState>, ApiPath(id): ApiPath<GameId>) -> ApiResult<Json<GameView>> {
    Ok(Json(s.store.game(id)?))
}

async fn submit_frame(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<GameId>,
    ApiQuery(q): ApiQuery<FrameQuery>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<ClassificationResult>> {
    let body = body?;
    Ok(Json(blocking(&s, move |store| store.game_submit_frame(id, q.round, &body)).await?))
}

async fn advance_game(
    State(s): State<AppState>,
    ApiPath(id): ApiPath<GameId>,
    ApiJson(req): ApiJson<AdvanceRequest>,
) -> ApiResult<Json<GameView>> {
    Ok(Json(s.store.game_advance(id, req.ms)?))
}

async fn game_summary(State(s): State<AppState>, ApiPath(id): ApiPath<GameId>) -> ApiResult<Json<GameSummary>> {
    Ok(Json(s.store.game_summary(id)?))
}

async fn high_score(State(s): State<AppState>, ApiPath(id): ApiPath<ProjectId>) -> ApiResult<Json<HighScore>> {
    Ok(Json(HighScore { high_score: s.store.high_score(id)? }))
}

async fn export(State(s): State<AppState>, ApiPath(id): ApiPath<ProjectId>) -> ApiResult<Json<ArchiveJson>> {
    let archive = blocking(&s, move |store| store.export_project(id)).await?;
    Ok(Json(ArchiveJson::from(&archive)))
}

async fn import(
    State(s): State<AppState>,
    ApiJson(req): ApiJson<ArchiveJson>,
) -> ApiResult<(StatusCode, Json<ProjectState>)> {
    let archive = req.into_archive().map_err(|e| ApiError::bad_request(format!("bad blob encoding: {e}")))?;
    let state = blocking(&s, move |store| store.import_archive(&archive)).await.map_err(|e| {
        // A corrupt blob in an upload is the client's fault.
        if e.code == "BlobCorrupt" || e.code == "BlobNotFound" {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code, e.message)
        } else {
            e
        }
    })?;
    Ok((StatusCode::CREATED, Json(state)))
}
