//! JSON API over the session store, consumed by the review UI.
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | POST | `/sessions` | `{"bundle": path}` | 201 [`SessionView`] |
//! | GET | `/sessions` | | 200 `{"sessions": [id]}` |
//! | GET | `/sessions/{id}` | | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/segments/merge` | `{"first": i, "second": j}` | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/segments/{i}/ignore` | | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/segments/confirm` | | 200 [`SessionView`] |
//! | PUT | `/sessions/{id}/segments/{i}/transcript` | `{"text": s}` | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/transcripts/confirm` | | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/transcripts/reopen` | | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/compile` | | 200 [`CompileView`] |
//! | POST | `/sessions/{id}/revert` | | 200 [`SessionView`] |
//! | POST | `/sessions/{id}/discard` | | 200 [`SessionView`] |
//! | GET | `/sessions/{id}/taskmodel` | | 200 `text/plain` task model |
//! | GET | `/sessions/{id}/signal` | | 200 `text/csv` diagnostics |
//!
//! Failures carry an [`ApiError`] body.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use ites_core::segmentation::SegmentStatus;
use ites_core::session::{Failure, SessionError};
use ites_core::taskmodel::GmrRule;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::store::{Action, Store, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    FailedDependency,
}

impl ApiErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ApiErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ApiErrorCode::NotFound => StatusCode::NOT_FOUND,
            ApiErrorCode::Conflict => StatusCode::CONFLICT,
            ApiErrorCode::FailedDependency => StatusCode::FAILED_DEPENDENCY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationView {
    pub position: usize,
    pub rule: &'static str,
    pub message: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorDetail {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    /// Short machine-readable reason, e.g. `not_adjacent`, `wrong_phase`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub daemon: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<ViolationView>,
}

/// Error body: `{"code", "message", "detail"}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub code: ApiErrorCode,
    pub message: String,
    pub detail: ErrorDetail,
}

impl ApiError {
    fn new(code: ApiErrorCode, message: impl Into<String>) -> ApiError {
        ApiError { code, message: message.into(), detail: ErrorDetail::default() }
    }

    fn rule(mut self, rule: &str) -> ApiError {
        self.detail.rule = Some(rule.to_string());
        self
    }

    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(ApiErrorCode::BadRequest, message)
    }
}

fn rule_code(rule: GmrRule) -> &'static str {
    match rule {
        GmrRule::Empty => "empty",
        GmrRule::MustStartWithGrasp => "must_start_with_grasp",
        GmrRule::MustEndWithRelease => "must_end_with_release",
        GmrRule::BoundaryInInterior => "boundary_in_interior",
        GmrRule::NoManipulativeTask => "no_manipulative_task",
    }
}

fn failure_error(failure: &Failure, message: String) -> ApiError {
    use ApiErrorCode::*;
    match failure {
        Failure::Grammar(v) => {
            let mut e = ApiError::new(Conflict, message).rule("gmr_violation");
            e.detail.violations = v
                .iter()
                .map(|x| ViolationView { position: x.position, rule: rule_code(x.rule), message: x.rule.message() })
                .collect();
            e
        }
        Failure::Recognition { segment, .. } => {
            let mut e = ApiError::new(FailedDependency, message).rule("recognition");
            e.detail.segment = Some(*segment);
            e
        }
        Failure::Daemon { segment, daemon, .. } => {
            let mut e = ApiError::new(FailedDependency, message).rule("daemon");
            e.detail.segment = Some(*segment);
            e.detail.daemon = Some(daemon);
            e
        }
        Failure::Discarded => ApiError::new(Conflict, message).rule("discarded"),
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        use ApiErrorCode::*;
        let message = e.to_string();
        match &e {
            Error::SessionNotFound(_) => ApiError::new(NotFound, message),
            Error::BundleNotFound(_) => ApiError::new(BadRequest, message).rule("bundle_not_found"),
            Error::Bundle { field, .. } => {
                let mut a = ApiError::new(BadRequest, message).rule("invalid_bundle");
                a.detail.field = Some(field.clone());
                a
            }
            Error::Format { .. } | Error::UnknownScenario(_) | Error::Generator(_) => ApiError::new(BadRequest, message),
            Error::Session(s) => match s {
                SessionError::WrongPhase { phase, .. } => {
                    let mut a = ApiError::new(Conflict, message).rule("wrong_phase");
                    a.detail.phase = Some(phase.to_string());
                    a
                }
                SessionError::OutOfRange { index, .. } => {
                    let mut a = ApiError::new(BadRequest, message).rule("out_of_range");
                    a.detail.segment = Some(*index);
                    a
                }
                SessionError::NotAdjacent { first, .. } => {
                    let mut a = ApiError::new(Conflict, message).rule("not_adjacent");
                    a.detail.segment = Some(*first);
                    a
                }
                SessionError::SegmentIgnored { index } | SessionError::NotTranscribed { index } => {
                    let rule = if matches!(s, SessionError::SegmentIgnored { .. }) { "segment_ignored" } else { "not_transcribed" };
                    let mut a = ApiError::new(Conflict, message).rule(rule);
                    a.detail.segment = Some(*index);
                    a
                }
                SessionError::TooFewSegments { .. } => ApiError::new(Conflict, message).rule("too_few_segments"),
                SessionError::Compile(f) => failure_error(f, message),
                SessionError::MissingCompileInputs | SessionError::Log { .. } => ApiError::new(FailedDependency, message),
            },
            Error::Io { .. }
            | Error::Backend(_)
            | Error::Segmentation(_)
            | Error::Recognition(_)
            | Error::Skill(_)
            | Error::TaskModel(_) => ApiError::new(FailedDependency, message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentView {
    pub index: usize,
    /// First frame, inclusive.
    pub start: usize,
    /// Last frame, exclusive.
    pub end: usize,
    pub start_time: f64,
    pub end_time: f64,
    /// `active` or `ignored`.
    pub status: &'static str,
    pub transcript: Option<String>,
    /// Transcription backend error for this segment, if any.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureView {
    pub message: String,
    pub error: ApiError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub id: String,
    pub bundle_id: String,
    pub phase: String,
    pub frame_count: usize,
    pub video_rate: f64,
    pub segments: Vec<SegmentView>,
    pub failure: Option<FailureView>,
    pub has_model: bool,
}

impl SessionView {
    pub fn of(ws: &Workspace) -> SessionView {
        let s = &ws.session;
        let rate = s.info().video_rate;
        SessionView {
            id: s.id().to_string(),
            bundle_id: ws.bundle.id.clone(),
            phase: s.phase().to_string(),
            frame_count: s.info().frame_count,
            video_rate: rate,
            segments: s
                .segments()
                .iter()
                .enumerate()
                .map(|(index, seg)| SegmentView {
                    index,
                    start: seg.start,
                    end: seg.end,
                    start_time: seg.start as f64 / rate,
                    end_time: seg.end as f64 / rate,
                    status: match seg.status {
                        SegmentStatus::Active => "active",
                        SegmentStatus::Ignored => "ignored",
                    },
                    transcript: seg.transcript.clone(),
                    flag: s.flag(index).map(str::to_string),
                })
                .collect(),
            failure: s.failure().map(|f| FailureView {
                message: f.to_string(),
                error: failure_error(f, f.to_string()),
            }),
            has_model: s.model().is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepView {
    pub label: &'static str,
    pub name: &'static str,
    pub source_segment: usize,
    pub transcript: String,
    pub object_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompileView {
    pub id: String,
    pub phase: String,
    pub steps: Vec<StepView>,
    /// The serialized task model, as served by `GET /sessions/{id}/taskmodel`.
    pub model: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBody {
    pub bundle: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeBody {
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptBody {
    pub text: String,
}

type Shared = Arc<RwLock<Workspace>>;

#[derive(Clone)]
pub struct AppState {
    store: Store,
    sessions: Arc<RwLock<HashMap<String, Shared>>>,
}

impl AppState {
    pub fn new(store: Store) -> AppState {
        AppState { store, sessions: Arc::default() }
    }

    fn session(&self, id: &str) -> ApiResult<Shared> {
        if let Some(ws) = self.sessions.read().expect("lock").get(id) {
            return Ok(ws.clone());
        }
        let ws = self.store.load(id)?;
        let mut map = self.sessions.write().expect("lock");
        Ok(map.entry(id.to_string()).or_insert_with(|| Arc::new(RwLock::new(ws))).clone())
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn index(raw: &str) -> ApiResult<usize> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("segment index must be a non-negative integer, got {raw:?}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(ApiErrorCode::FailedDependency, format!("worker failed: {e}"))))
}

async fn act(state: AppState, id: String, action: Action) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        let shared = state.session(&id)?;
        let mut ws = shared.write().expect("lock");
        state.store.apply(&mut ws, action)?;
        Ok(Json(SessionView::of(&ws)))
    })
    .await
}

async fn create(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let body: CreateBody = parse(&body)?;
    blocking(move || {
        let ws = state.store.create(&body.bundle)?;
        let view = SessionView::of(&ws);
        state.sessions.write().expect("lock").insert(view.id.clone(), Arc::new(RwLock::new(ws)));
        Ok((StatusCode::CREATED, Json(view)))
    })
    .await
}

#[derive(Serialize)]
struct ListView {
    sessions: Vec<String>,
}

async fn list(State(state): State<AppState>) -> ApiResult<Json<ListView>> {
    Ok(Json(ListView { sessions: state.store.list()? }))
}

async fn show(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        let shared = state.session(&id)?;
        let ws = shared.read().expect("lock");
        Ok(Json(SessionView::of(&ws)))
    })
    .await
}

async fn merge(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionView>> {
    let b: MergeBody = parse(&body)?;
    act(state, id, Action::Merge { first: b.first, second: b.second }).await
}

async fn ignore(State(state): State<AppState>, Path((id, i)): Path<(String, String)>) -> ApiResult<Json<SessionView>> {
    act(state, id, Action::Ignore { index: index(&i)? }).await
}

async fn confirm_segments(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    act(state, id, Action::ConfirmSegments).await
}

async fn set_transcript(
    State(state): State<AppState>,
    Path((id, i)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<SessionView>> {
    let index = index(&i)?;
    let b: TranscriptBody = parse(&body)?;
    act(state, id, Action::SetTranscript { index, text: b.text }).await
}

async fn confirm_transcripts(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    act(state, id, Action::ConfirmTranscripts).await
}

async fn reopen_transcripts(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    act(state, id, Action::ReopenTranscripts).await
}

async fn revert(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    act(state, id, Action::Revert).await
}

async fn discard(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    act(state, id, Action::Discard).await
}

async fn compile(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<CompileView>> {
    blocking(move || {
        let shared = state.session(&id)?;
        let mut ws = shared.write().expect("lock");
        state.store.apply(&mut ws, Action::Compile)?;
        let model = ws.session.model().expect("compiled");
        Ok(Json(CompileView {
            id: id.clone(),
            phase: ws.session.phase().to_string(),
            steps: model
                .steps
                .iter()
                .map(|s| StepView {
                    label: s.label.code(),
                    name: s.label.name(),
                    source_segment: s.source_segment,
                    transcript: s.transcript.clone(),
                    object_name: s.params.object_name.clone(),
                })
                .collect(),
            model: model.to_text(),
        }))
    })
    .await
}

async fn taskmodel(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let shared = state.session(&id)?;
        let ws = shared.read().expect("lock");
        let model = ws.session.model().ok_or_else(|| {
            let mut e = ApiError::new(ApiErrorCode::Conflict, format!("no task model in phase {}", ws.session.phase()))
                .rule("wrong_phase");
            e.detail.phase = Some(ws.session.phase().to_string());
            e
        })?;
        Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], model.to_text()).into_response())
    })
    .await
}

async fn signal(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let shared = state.session(&id)?;
        let csv = shared.read().expect("lock").signal_csv()?;
        Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
    })
    .await
}

async fn fallback() -> ApiError {
    ApiError::new(ApiErrorCode::NotFound, "no such endpoint")
}

pub fn router(store: Store) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/segments/merge", post(merge))
        .route("/sessions/{id}/segments/confirm", post(confirm_segments))
        .route("/sessions/{id}/segments/{i}/ignore", post(ignore))
        .route("/sessions/{id}/segments/{i}/transcript", put(set_transcript))
        .route("/sessions/{id}/transcripts/confirm", post(confirm_transcripts))
        .route("/sessions/{id}/transcripts/reopen", post(reopen_transcripts))
        .route("/sessions/{id}/compile", post(compile))
        .route("/sessions/{id}/revert", post(revert))
        .route("/sessions/{id}/discard", post(discard))
        .route("/sessions/{id}/taskmodel", get(taskmodel))
        .route("/sessions/{id}/signal", get(signal))
        .fallback(fallback)
        .with_state(AppState::new(store))
}

/// Serves the API until the process is stopped.
pub async fn serve(store: Store, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
