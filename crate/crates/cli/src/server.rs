use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use canine_core::agreement::{Phase, TablesConfig};
use canine_core::study::{StudyError, StudyService, StudySpec, StudyStore};
use serde::Deserialize;
use serde_json::json;

use crate::error::{CliError, CliResult};

pub struct ApiError(StudyError);

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        ApiError(e)
    }
}

fn error_kind(e: &StudyError) -> (StatusCode, &'static str) {
    use StudyError::*;
    match e {
        DuplicateStudyId(_) => (StatusCode::CONFLICT, "duplicate_study_id"),
        EmptyCaseList => (StatusCode::BAD_REQUEST, "empty_case_list"),
        NoRaters => (StatusCode::BAD_REQUEST, "no_raters"),
        InvalidSpec(_) => (StatusCode::BAD_REQUEST, "invalid_spec"),
        UnknownStudy(_) => (StatusCode::NOT_FOUND, "unknown_study"),
        UnknownRater(_) => (StatusCode::NOT_FOUND, "unknown_rater"),
        UnknownCase(_) => (StatusCode::NOT_FOUND, "unknown_case"),
        PhaseNotOpen { .. } => (StatusCode::CONFLICT, "phase_not_open"),
        OutOfOrderRating { .. } => (StatusCode::CONFLICT, "out_of_order_rating"),
        ConflictingRating { .. } => (StatusCode::CONFLICT, "conflicting_rating"),
        LabelSpaceMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "label_space_mismatch"),
        InvalidLabel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_label"),
        IncompleteStudy(_) => (StatusCode::CONFLICT, "incomplete_study"),
        Agreement(_) => (StatusCode::UNPROCESSABLE_ENTITY, "agreement"),
        CorruptLog { .. } | Io(_) | Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = error_kind(&self.0);
        (status, Json(json!({"error": kind, "message": self.0.to_string()}))).into_response()
    }
}

fn bad_request(message: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({"error": "bad_request", "message": message})),
    )
        .into_response()
}

type Svc = State<Arc<StudyService>>;

async fn create_study(State(svc): Svc, Json(spec): Json<StudySpec>) -> Result<Response, ApiError> {
    let overview = svc.create(&spec)?;
    Ok((StatusCode::CREATED, Json(overview)).into_response())
}

async fn list_studies(State(svc): Svc) -> Result<Response, ApiError> {
    Ok(Json(json!({"studies": svc.store().ids()?})).into_response())
}

async fn get_study(State(svc): Svc, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.overview(&id)?).into_response())
}

fn parse_phase(s: &str) -> Option<Phase> {
    match s.parse::<Phase>() {
        Ok(p @ (Phase::T0 | Phase::T1)) => Some(p),
        _ => None,
    }
}

fn bad_phase(s: &str) -> Response {
    bad_request(format!("phase must be T0 or T1, got {s:?}"))
}

async fn next_item(
    State(svc): Svc,
    UrlPath((id, rater, phase)): UrlPath<(String, String, String)>,
) -> Result<Response, ApiError> {
    let Some(phase) = parse_phase(&phase) else {
        return Ok(bad_phase(&phase));
    };
    Ok(Json(svc.next_item(&id, &rater, phase)?).into_response())
}

#[derive(Debug, Deserialize)]
pub struct RatingBody {
    pub case: String,
    pub label: String,
    #[serde(default)]
    pub elapsed_ms: Option<u64>,
}

/// 201 with the stored record for a new rating, 200 when the identical
/// rating was already recorded.
async fn post_rating(
    State(svc): Svc,
    UrlPath((id, rater, phase)): UrlPath<(String, String, String)>,
    Json(body): Json<RatingBody>,
) -> Result<Response, ApiError> {
    let Some(phase) = parse_phase(&phase) else {
        return Ok(bad_phase(&phase));
    };
    let svc2 = svc.clone();
    // the log append blocks on disk
    let result = tokio::task::spawn_blocking(move || {
        svc2.record_rating(&id, &rater, phase, &body.case, &body.label, body.elapsed_ms)
    })
    .await
    .expect("rating task panicked")?;
    let (record, created) = result;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(record)).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub strict: bool,
}

async fn get_report(
    State(svc): Svc,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ApiError> {
    // bootstrap intervals are CPU-bound
    let report = tokio::task::spawn_blocking(move || svc.report(&id, q.strict))
        .await
        .expect("report task panicked")?;
    Ok(Json(report).into_response())
}

pub fn router(svc: Arc<StudyService>) -> Router {
    Router::new()
        .route("/studies", post(create_study).get(list_studies))
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/raters/{rater}/phases/{phase}/next", get(next_item))
        .route("/studies/{id}/raters/{rater}/phases/{phase}/ratings", post(post_rating))
        .route("/studies/{id}/report", get(get_report))
        .with_state(svc)
}

pub fn service(studies: &Path, tables: TablesConfig) -> CliResult<Arc<StudyService>> {
    let store = StudyStore::open(studies).map_err(|e| {
        CliError::input(e).context(format!("cannot use studies directory {}", studies.display()))
    })?;
    Ok(Arc::new(StudyService::new(store, tables)))
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

/// Serves until Ctrl-C. Ratings are synced to disk as they are accepted,
/// so in-flight requests are the only thing drained on shutdown.
pub fn serve(studies: &Path, host: &str, port: u16) -> CliResult<()> {
    let svc = service(studies, TablesConfig::default())?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::config(anyhow::anyhow!("invalid address {host}:{port}: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::runtime(e).context(format!("cannot listen on {addr}")))?;
        let local = listener.local_addr().map_err(CliError::runtime)?;
        eprintln!("listening on http://{local}");
        axum::serve(listener, router(svc))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(CliError::runtime)
    })
}
