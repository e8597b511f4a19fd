//! HTTP service: one-shot inference, refinement sessions and evaluation jobs.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::task::JoinSet;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::dataset::{load_manifest_with, ManifestError, ManifestOptions};
use crate::harness::{render_report, run_eval, ReportFormat, RunConfig};
use crate::model::{EvidenceBundle, GeoGranularity, GeoGuess, ImageEvidence, Language};
use crate::pipeline::{Pipeline, PipelineError};
use crate::prompt::PromptError;
use crate::scoring::EvalReport;
use crate::session::{Round, SessionError, SessionManager, SessionState, SessionStatus};

pub const API_VERSION: &str = "v1";
pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;
pub const MAX_IMAGES: usize = 8;
const MAX_BODY_BYTES: usize = MAX_IMAGES * MAX_IMAGE_BYTES + 2 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalJob {
    pub job_id: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
}

pub struct AppState {
    pub pipeline: Pipeline,
    pub sessions: Arc<SessionManager>,
    pub eval_pipelines: Vec<Pipeline>,
    pub run_config: RunConfig,
    pub dataset_dir: Option<PathBuf>,
    pub api_token: Option<String>,
    jobs: RwLock<HashMap<String, EvalJob>>,
    tasks: Mutex<JoinSet<()>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, sessions: Arc<SessionManager>) -> Self {
        AppState {
            eval_pipelines: vec![pipeline.clone()],
            pipeline,
            sessions,
            run_config: RunConfig::default(),
            dataset_dir: None,
            api_token: None,
            jobs: RwLock::new(HashMap::new()),
            tasks: Mutex::new(JoinSet::new()),
        }
    }

    pub fn with_eval_pipelines(mut self, pipelines: Vec<Pipeline>) -> Self {
        self.eval_pipelines = pipelines;
        self
    }

    pub fn with_run_config(mut self, config: RunConfig) -> Self {
        self.run_config = config;
        self
    }

    pub fn with_dataset_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.dataset_dir = dir;
        self
    }

    pub fn with_api_token(mut self, token: Option<String>) -> Self {
        self.api_token = token.filter(|t| !t.is_empty());
        self
    }

    /// Waits for every running evaluation job.
    pub async fn drain_jobs(&self) {
        let mut set = std::mem::take(&mut *self.tasks.lock());
        while set.join_next().await.is_some() {}
    }
}

struct ApiError(StatusCode, Value);

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError(status, json!({"error": kind, "message": message.into()}))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(b) => ApiError(
                StatusCode::BAD_GATEWAY,
                json!({"error": "backend", "message": b.to_string(), "detail": b}),
            ),
            PipelineError::Prompt(PromptError::EmptyEvidence) => {
                ApiError::bad_request("at least one image or text is required")
            }
            PipelineError::Prompt(p @ PromptError::TooManyAttachments { .. })
            | PipelineError::Prompt(p @ PromptError::UnsupportedLanguage(_)) => ApiError::bad_request(p.to_string()),
            PipelineError::Prompt(p) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "prompt", p.to_string()),
            m @ PipelineError::Media { .. } => ApiError::bad_request(m.to_string()),
            p @ PipelineError::Profile(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "parse_error", p.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            SessionError::Closed(_) => Self::new(StatusCode::CONFLICT, "closed", e.to_string()),
            SessionError::EmptySession => Self::new(StatusCode::CONFLICT, "empty_session", e.to_string()),
            SessionError::Backend { session_id, error } => ApiError(
                StatusCode::BAD_GATEWAY,
                json!({"error": "backend", "message": error.to_string(), "detail": error, "session_id": session_id}),
            ),
            SessionError::Pipeline(p) => p.into(),
            SessionError::Storage(m) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", m),
        }
    }
}

#[derive(Deserialize)]
struct JsonImage {
    #[serde(default)]
    name: String,
    data: String,
}

#[derive(Deserialize)]
struct JsonEvidence {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    texts: Vec<String>,
    #[serde(default)]
    hint: Option<String>,
    #[serde(default)]
    hints: Vec<String>,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    images: Vec<JsonImage>,
}

fn parse_language(tag: Option<&str>) -> Result<Language, ApiError> {
    match tag.map(str::trim).filter(|t| !t.is_empty()) {
        None => Ok(Language::En),
        Some(t) => t.parse().map_err(|e: crate::model::ModelError| ApiError::bad_request(e.to_string())),
    }
}

fn check_image(name: &str, bytes: &[u8], count: usize) -> Result<(), ApiError> {
    if count >= MAX_IMAGES {
        return Err(ApiError::bad_request(format!("at most {MAX_IMAGES} images per request")));
    }
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("{name}: images are limited to {MAX_IMAGE_BYTES} bytes"),
        ));
    }
    Ok(())
}

/// Evidence from a multipart form (`image`/`images` files, `text`, `hint`,
/// `language`) or a JSON body with base64 images.
async fn read_evidence(req: Request) -> Result<EvidenceBundle, ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let mut bundle = EvidenceBundle::default();
    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut language = None;
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?
        {
            let name = field.name().unwrap_or("").to_string();
            match name.as_str() {
                "image" | "images" | "images[]" => {
                    let file = field.file_name().unwrap_or("upload").to_string();
                    let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                    if bytes.is_empty() {
                        continue;
                    }
                    check_image(&file, &bytes, bundle.images.len())?;
                    bundle.images.push(ImageEvidence::from_bytes(file, bytes.to_vec()));
                }
                "text" | "hint" | "language" => {
                    let value = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                    match name.as_str() {
                        "text" if !value.trim().is_empty() => bundle.texts.push(value),
                        "hint" if !value.trim().is_empty() => bundle.hints.push(value),
                        "language" => language = Some(value),
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        bundle.prompt_language = parse_language(language.as_deref())?;
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        if body.is_empty() {
            return Ok(bundle);
        }
        let doc: JsonEvidence =
            serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid JSON: {e}")))?;
        bundle.prompt_language = parse_language(doc.language.as_deref())?;
        bundle.texts = doc.text.into_iter().chain(doc.texts).filter(|t| !t.trim().is_empty()).collect();
        bundle.hints = doc.hint.into_iter().chain(doc.hints).filter(|t| !t.trim().is_empty()).collect();
        for (i, img) in doc.images.into_iter().enumerate() {
            let bytes = STANDARD
                .decode(img.data.trim())
                .map_err(|e| ApiError::bad_request(format!("images[{i}]: {e}")))?;
            let name = if img.name.is_empty() { format!("image-{i}") } else { img.name };
            check_image(&name, &bytes, bundle.images.len())?;
            bundle.images.push(ImageEvidence::from_bytes(name, bytes));
        }
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExifWarning {
    pub image: String,
    pub lat: f64,
    pub lon: f64,
}

pub fn exif_warnings(bundle: &EvidenceBundle) -> Vec<ExifWarning> {
    bundle
        .images
        .iter()
        .filter_map(|img| {
            let gps = img.exif.as_ref()?.gps?;
            Some(ExifWarning {
                image: img.name.clone(),
                lat: gps.lat(),
                lon: gps.lon(),
            })
        })
        .collect()
}

async fn healthz() -> &'static str {
    "ok"
}

async fn infer(State(state): State<Arc<AppState>>, req: Request) -> Result<Response, ApiError> {
    let bundle = read_evidence(req).await?;
    if bundle.is_empty() {
        return Err(ApiError::bad_request("at least one image or text is required"));
    }
    let warnings = exif_warnings(&bundle);
    let inf = state.pipeline.infer(&bundle).await?;
    if let Some(err) = &inf.parse_error {
        return Ok((
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({
                "error": "parse_error",
                "message": err,
                "raw_text": inf.response.text,
                "exif_warnings": warnings,
            })),
        )
            .into_response());
    }
    Ok(Json(json!({
        "guess": inf.guess,
        "granularity": inf.guess.granularity(),
        "map_url": inf.map_url,
        "resolved": inf.resolved,
        "exif_warnings": warnings,
        "response_id": inf.response.response_id,
        "model_id": inf.response.model_id,
        "request_digest": inf.request_digest,
    }))
    .into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceView {
    pub images: Vec<String>,
    pub texts: Vec<String>,
    pub hints: Vec<String>,
    pub language: Language,
}

/// Session payload without image bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: SessionStatus,
    pub rounds: Vec<Round>,
    pub best: Option<GeoGuess>,
    pub best_granularity: GeoGranularity,
    pub map_url: Option<String>,
    pub exif_warnings: Vec<String>,
    pub evidence: EvidenceView,
    pub created_at: String,
    pub updated_at: String,
}

impl From<&SessionState> for SessionView {
    fn from(s: &SessionState) -> Self {
        SessionView {
            session_id: s.session_id.clone(),
            status: s.status,
            rounds: s.rounds.clone(),
            best: s.best.clone(),
            best_granularity: s.best.as_ref().map_or(GeoGranularity::Unknown, GeoGuess::granularity),
            map_url: s.best_round().and_then(|r| r.map_url.clone()),
            exif_warnings: s.exif_warnings.clone(),
            evidence: EvidenceView {
                images: s.evidence.images.iter().map(|i| i.name.clone()).collect(),
                texts: s.evidence.texts.clone(),
                hints: s.evidence.hints.clone(),
                language: s.evidence.prompt_language,
            },
            created_at: s.created_at.clone(),
            updated_at: s.updated_at.clone(),
        }
    }
}

async fn create_session(State(state): State<Arc<AppState>>, req: Request) -> Result<Response, ApiError> {
    let bundle = read_evidence(req).await?;
    if bundle.is_empty() {
        return Err(ApiError::bad_request("at least one image or text is required"));
    }
    let s = state.sessions.start_session(bundle).await?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&s))).into_response())
}

async fn add_evidence(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Request,
) -> Result<Json<SessionView>, ApiError> {
    // unknown ids are reported before the body is examined
    state.sessions.get(&id)?;
    let bundle = read_evidence(req).await?;
    if bundle.is_empty() {
        return Err(ApiError::bad_request("a hint or an image is required"));
    }
    let s = state.sessions.add_evidence(&id, bundle).await?;
    Ok(Json(SessionView::from(&s)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(SessionView::from(&state.sessions.get(&id)?)))
}

async fn close_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(SessionView::from(&state.sessions.close(&id).await?)))
}

fn set_job(state: &AppState, id: &str, f: impl FnOnce(&mut EvalJob)) {
    if let Some(job) = state.jobs.write().get_mut(id) {
        f(job);
    }
}

async fn submit_eval(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let opts = ManifestOptions {
        base_dir: state.dataset_dir.clone(),
        check_files: false,
    };
    let entries = load_manifest_with(&body, &opts).map_err(|e| match &e {
        ManifestError::Schema { path, .. } | ManifestError::MissingFile { path, .. } => ApiError(
            StatusCode::BAD_REQUEST,
            json!({"error": "schema", "message": e.to_string(), "path": path}),
        ),
        _ => ApiError::new(StatusCode::BAD_REQUEST, "schema", e.to_string()),
    })?;
    if entries.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "schema", "manifest has no entries"));
    }
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    state.jobs.write().insert(
        job_id.clone(),
        EvalJob {
            job_id: job_id.clone(),
            status: JobStatus::Queued,
            error: None,
            report: None,
        },
    );
    let worker = state.clone();
    let id = job_id.clone();
    state.tasks.lock().spawn(async move {
        set_job(&worker, &id, |j| j.status = JobStatus::Running);
        let result = run_eval(&entries, &worker.eval_pipelines, &worker.run_config).await;
        set_job(&worker, &id, |j| match result {
            Ok(report) => {
                j.status = JobStatus::Done;
                j.report = Some(report);
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }
        });
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"job_id": job_id, "status": JobStatus::Queued})),
    )
        .into_response())
}

async fn get_eval(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let job = state
        .jobs
        .read()
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown job {id}")))?;
    let wants_csv = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|a| a.contains("text/csv"));
    if let (true, Some(report)) = (wants_csv, &job.report) {
        let csv = render_report(report, ReportFormat::Csv)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report", e.to_string()))?;
        return Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response());
    }
    Ok(Json(job).into_response())
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.api_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v.trim() == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION, header::ACCEPT]);
    if origins.iter().any(|o| o == "*") {
        return Some(base.allow_origin(Any));
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    Some(base.allow_origin(AllowOrigin::list(list)))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let v1 = Router::new()
        .route("/infer", post(infer))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/evidence", post(add_evidence))
        .route("/sessions/:id/close", post(close_session))
        .route("/eval", post(submit_eval))
        .route("/eval/:job", get(get_eval))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = Router::new()
        .route("/healthz", get(healthz))
        .nest(&format!("/{API_VERSION}"), v1)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match cors_layer(cors_origins) {
        Some(cors) => app.layer(cors),
        None => app,
    }
}

/// Serves until ctrl-c, then waits for running evaluation jobs.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, cors_origins: &[String]) -> std::io::Result<()> {
    if state.api_token.is_none() && !addr.ip().is_loopback() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::PermissionDenied,
            format!("refusing to listen on {addr} without {}", crate::config::ENV_API_TOKEN),
        ));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone(), cors_origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.drain_jobs().await;
    Ok(())
}
