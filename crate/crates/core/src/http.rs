//! JSON HTTP API over [`TriageService`].
//!
//! | method | path                       | body                               |
//! |--------|----------------------------|------------------------------------|
//! | POST   | `/patients`                | `{age, comorbidities}`             |
//! | GET    | `/patients/{id}`           |                                    |
//! | POST   | `/patients/{id}/exams`     | multipart `image` + `options` JSON |
//! | GET    | `/patients/{id}/risk`      |                                    |
//! | POST   | `/patients/{id}/what-if`   | [`WhatIf`]                         |
//! | GET    | `/healthz`                 |                                    |
//!
//! Every response body is a JSON object carrying a `disclaimer` field.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classifier::ModelParams;
use crate::indicators::{Age, ScoringConfig, DISCLAIMER};
use crate::store::{RecordStore, StoreError};
use crate::triage::{ComorbidityInput, ExamOptions, TriageError, TriageService, WhatIf};

const MAX_UPLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("event log replay failed: {0}")]
    StoreCorrupt(String),
    #[error(transparent)]
    Store(StoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub store_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub scoring: ScoringConfig,
    pub model: Option<ModelParams>,
}

#[derive(Debug, Deserialize)]
struct CreatePatient {
    age: Age,
    #[serde(default)]
    comorbidities: ComorbidityInput,
}

#[derive(Serialize)]
struct WithDisclaimer<T> {
    #[serde(flatten)]
    body: T,
    disclaimer: &'static str,
}

fn ok<T: Serialize>(status: StatusCode, body: T) -> Response {
    (status, Json(WithDisclaimer { body, disclaimer: DISCLAIMER })).into_response()
}

struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl ApiError {
    fn bad_request(msg: impl std::fmt::Display) -> Self {
        Self(
            StatusCode::BAD_REQUEST,
            json!({"error": msg.to_string(), "kind": "bad_request", "disclaimer": DISCLAIMER}),
        )
    }
}

impl From<TriageError> for ApiError {
    fn from(e: TriageError) -> Self {
        use crate::indicators::IndicatorError as I;
        let (status, kind) = match &e {
            TriageError::UnknownPatient(_) => (StatusCode::NOT_FOUND, "unknown_patient"),
            TriageError::NoExams(_) => (StatusCode::CONFLICT, "no_exams"),
            TriageError::InvalidOverride(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_override"),
            TriageError::ModelUnavailable => (StatusCode::UNPROCESSABLE_ENTITY, "model_unavailable"),
            TriageError::Pipeline { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "pipeline"),
            TriageError::Indicator(I::NegativeAge(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "negative_age"),
            TriageError::Indicator(I::GridMismatch { .. }) => (StatusCode::CONFLICT, "grid_mismatch"),
            TriageError::Indicator(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            TriageError::Store(StoreError::NonChronological { .. }) => (StatusCode::CONFLICT, "non_chronological"),
            TriageError::Store(_) => (StatusCode::SERVICE_UNAVAILABLE, "store_unavailable"),
        };
        Self(
            status,
            json!({"error": e.to_string(), "kind": kind, "stage": e.stage(), "disclaimer": DISCLAIMER}),
        )
    }
}

type Api = Arc<TriageService>;

async fn healthz() -> Response {
    ok(StatusCode::OK, json!({"status": "ok"}))
}

async fn create_patient(State(svc): State<Api>, body: Result<Json<CreatePatient>, axum::extract::rejection::JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(ApiError::bad_request)?;
    let record = svc.create_patient(req.age, req.comorbidities.into())?;
    Ok(ok(StatusCode::CREATED, record))
}

async fn get_patient(State(svc): State<Api>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(ok(StatusCode::OK, svc.patient(&id)?))
}

async fn submit_exam(State(svc): State<Api>, Path(id): Path<String>, mut form: Multipart) -> Result<Response, ApiError> {
    let mut image = None;
    let mut options = ExamOptions::default();
    while let Some(field) = form.next_field().await.map_err(ApiError::bad_request)? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(ApiError::bad_request)?),
            Some("options") => {
                let text = field.text().await.map_err(ApiError::bad_request)?;
                options = serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("options: {e}")))?;
            }
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing `image` field"))?;
    let exam = tokio::task::spawn_blocking(move || svc.submit_exam(&id, &image, &options))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": e.to_string(), "disclaimer": DISCLAIMER})))??;
    Ok(ok(StatusCode::CREATED, exam))
}

async fn risk(State(svc): State<Api>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok((StatusCode::OK, Json(svc.assess_risk(&id)?)).into_response())
}

async fn what_if(
    State(svc): State<Api>,
    Path(id): Path<String>,
    body: Result<Json<WhatIf>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(overrides) = body.map_err(ApiError::bad_request)?;
    Ok((StatusCode::OK, Json(svc.what_if(&id, &overrides)?)).into_response())
}

pub fn router(service: Arc<TriageService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/patients", post(create_patient))
        .route("/patients/{id}", get(get_patient))
        .route("/patients/{id}/exams", post(submit_exam))
        .route("/patients/{id}/risk", get(risk))
        .route("/patients/{id}/what-if", post(what_if))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(service)
}

/// Replays the store and builds the service.
pub fn open_service(cfg: &ServeConfig) -> Result<Arc<TriageService>, ServeError> {
    let store = RecordStore::open(&cfg.store_dir).map_err(|e| match e {
        StoreError::StoreCorrupt { .. } => ServeError::StoreCorrupt(e.to_string()),
        other => ServeError::Store(other),
    })?;
    Ok(Arc::new(TriageService::new(store, cfg.scoring.clone(), cfg.model.clone())))
}

pub async fn bind(host: &str, port: u16) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind((host, port)).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(port),
        _ => ServeError::Io(e),
    })
}

/// Serves until ctrl-c.
pub async fn serve(cfg: ServeConfig) -> Result<(), ServeError> {
    let service = open_service(&cfg)?;
    let listener = bind(&cfg.host, cfg.port).await?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, store = %cfg.store_dir.display(), "triage service listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
