//! The `/api/v1` REST surface.
//!
//! | Route | Who |
//! |---|---|
//! | `GET /health` | anyone |
//! | `GET /apps` | any user: live apps they may run |
//! | `GET /apps/{id}` | users who may run it: definition and choice options |
//! | `POST /apps/{id}/runs` | users who may run it: `{inputs, pressed?}` → 202 `{job_id}` |
//! | `GET /runs/{job_id}` | the submitter or an ADMIN |
//! | `GET /runs/{job_id}/report` | the submitter or an ADMIN |
//! | `POST /admin/workbooks` | AUTHOR+: `{workbook_id, content}` |
//! | `POST /admin/appdefs` | AUTHOR+: the definition document |
//! | `GET /admin/assets/{id}/versions` | AUTHOR+ |
//! | `POST /admin/appdefs/{id}/publish` | ADMIN: `{revision, note?}` |
//! | `POST /admin/appdefs/{id}/rollback` | ADMIN: `{revision}` |
//! | `GET /admin/audit?user=&app=&from=&to=` | ADMIN |

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Request, State};
use axum::http::header::{AUTHORIZATION, LOCATION};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sheetbridge_broker::{Broker, Job, JobRequest, JobStatus};
use sheetbridge_core::appdef::{AppDefinition, Inputs, Role};
use sheetbridge_core::{CellValue, WorkbookRef};
use sheetbridge_registry::{AssetKind, AuditFilter, Registry};

use crate::error::ApiError;

/// A bearer token bound to one user from the configured user table.
#[derive(Debug, Clone)]
pub struct Session {
    pub token: String,
    pub user_id: String,
    pub issued_at: DateTime<Utc>,
}

pub struct AppState {
    pub registry: Arc<Registry>,
    pub broker: Arc<Broker>,
    pub sessions: HashMap<String, Session>,
}

type Shared = Arc<AppState>;

/// Largest accepted request body. Workbook uploads at the cell cap run to
/// a few tens of megabytes.
pub const MAX_BODY_BYTES: usize = 64 << 20;

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/apps", get(list_apps))
        .route("/apps/{id}", get(get_app))
        .route("/apps/{id}/runs", post(submit_run))
        .route("/runs/{job_id}", get(get_run))
        .route("/runs/{job_id}/report", get(get_report))
        .route("/admin/workbooks", post(upload_workbook))
        .route("/admin/appdefs", post(upload_appdef))
        .route("/admin/assets/{id}/versions", get(versions))
        .route("/admin/appdefs/{id}/publish", post(publish))
        .route("/admin/appdefs/{id}/rollback", post(rollback))
        .route("/admin/audit", get(audit))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    Router::new().nest("/api/v1", api)
}

/// The authenticated user. Missing, malformed and unknown tokens are all
/// rejected with the same 401.
pub struct Caller {
    pub user_id: String,
    pub role: Role,
}

impl FromRequestParts<Shared> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(ApiError::unauthorized)?;
        let session = state.sessions.get(token).ok_or_else(ApiError::unauthorized)?;
        let user = state.registry.user(&session.user_id).ok_or_else(ApiError::unauthorized)?;
        Ok(Caller {
            user_id: user.user_id,
            role: user.role,
        })
    }
}

/// JSON body whose parse errors become VALIDATION errors.
pub struct Body<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(json_rejection(e)),
        }
    }
}

fn json_rejection(e: JsonRejection) -> ApiError {
    let mut err = ApiError::validation(e.body_text());
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        err.status = StatusCode::PAYLOAD_TOO_LARGE;
    }
    err
}

/// Query string whose parse errors become VALIDATION errors.
pub struct Params<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        match axum::extract::Query::<T>::from_request_parts(parts, state).await {
            Ok(q) => Ok(Params(q.0)),
            Err(e) => Err(query_rejection(e)),
        }
    }
}

fn query_rejection(e: QueryRejection) -> ApiError {
    ApiError::validation(e.body_text())
}

/// Runs registry and broker calls, which may wait on disk, off the async
/// threads.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_apps(State(s): State<Shared>, caller: Caller) -> Result<Response, ApiError> {
    let apps = blocking(move || Ok(s.registry.list_apps(&caller.user_id)?)).await?;
    Ok(Json(apps).into_response())
}

/// Body of `GET /apps/{id}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct LiveAppView {
    pub app_id: String,
    pub revision: u32,
    pub workbook_ref: WorkbookRef,
    pub definition: AppDefinition,
    /// Options of every choice list and radio group, by component id.
    pub choices: BTreeMap<String, Vec<CellValue>>,
}

async fn get_app(State(s): State<Shared>, caller: Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let live = blocking(move || Ok(s.registry.get_live(&caller.user_id, &id)?)).await?;
    Ok(Json(LiveAppView {
        app_id: live.definition.app_id.clone(),
        revision: live.app_version.revision,
        workbook_ref: live.definition.workbook_ref.clone(),
        definition: (*live.definition).clone(),
        choices: (*live.choices).clone(),
    })
    .into_response())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressed: Option<String>,
}

/// Body of the 202 answer to `POST /apps/{id}/runs`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunAccepted {
    pub job_id: String,
    pub status: JobStatus,
    pub app_revision: u32,
}

async fn submit_run(
    State(s): State<Shared>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<RunRequest>,
) -> Result<Response, ApiError> {
    let job = blocking(move || {
        // resolves the live revision and checks the caller may run it
        let live = s.registry.get_live(&caller.user_id, &id)?;
        Ok(s.broker.submit(JobRequest {
            user_id: caller.user_id,
            app_id: id,
            app_revision: live.app_version.revision,
            workbook_ref: live.definition.workbook_ref.clone(),
            inputs: req.inputs,
            pressed: req.pressed,
        })?)
    })
    .await?;
    let location = format!("/api/v1/runs/{}", job.job_id);
    let body = RunAccepted {
        job_id: job.job_id,
        status: job.status,
        app_revision: job.request.app_revision,
    };
    Ok((StatusCode::ACCEPTED, [(LOCATION, location)], Json(body)).into_response())
}

/// Another user's run is reported as missing, not forbidden, so job ids
/// cannot be probed.
fn visible_job(s: &AppState, caller: &Caller, job_id: &str) -> Result<Job, ApiError> {
    let job = s.broker.status(job_id)?;
    if job.request.user_id != caller.user_id && caller.role != Role::Admin {
        return Err(ApiError::not_found("unknown run"));
    }
    Ok(job)
}

async fn get_run(State(s): State<Shared>, caller: Caller, Path(job_id): Path<String>) -> Result<Response, ApiError> {
    let job = visible_job(&s, &caller, &job_id)?;
    Ok(Json(job).into_response())
}

async fn get_report(State(s): State<Shared>, caller: Caller, Path(job_id): Path<String>) -> Result<Response, ApiError> {
    let job = visible_job(&s, &caller, &job_id)?;
    match (job.status, job.result) {
        (JobStatus::Done, Some(result)) => match result.report {
            Some(report) => Ok(Json(report).into_response()),
            None => Err(ApiError::not_found(format!(
                "run finished with {} and has no report",
                result.outcome.as_str()
            ))),
        },
        (JobStatus::Failed, _) => Err(ApiError::conflict("run failed and has no report")),
        _ => Err(ApiError::conflict("run has not finished")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbookUpload {
    pub workbook_id: String,
    /// The workbook in its text format.
    pub content: String,
}

async fn upload_workbook(
    State(s): State<Shared>,
    caller: Caller,
    Body(up): Body<WorkbookUpload>,
) -> Result<Response, ApiError> {
    let v = blocking(move || {
        Ok(s.registry
            .upload(&caller.user_id, AssetKind::Workbook, Some(&up.workbook_id), &up.content)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

async fn upload_appdef(
    State(s): State<Shared>,
    caller: Caller,
    Body(doc): Body<serde_json::Value>,
) -> Result<Response, ApiError> {
    let v = blocking(move || {
        Ok(s.registry
            .upload(&caller.user_id, AssetKind::Appdef, None, &doc.to_string())?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

async fn versions(State(s): State<Shared>, caller: Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let v = blocking(move || Ok(s.registry.versions(&caller.user_id, &id)?)).await?;
    Ok(Json(v).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishRequest {
    pub revision: u32,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollbackRequest {
    pub revision: u32,
}

async fn publish(
    State(s): State<Shared>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<PublishRequest>,
) -> Result<Response, ApiError> {
    let v = blocking(move || Ok(s.registry.approve_and_publish(&caller.user_id, &id, req.revision, &req.note)?)).await?;
    Ok(Json(v).into_response())
}

async fn rollback(
    State(s): State<Shared>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<RollbackRequest>,
) -> Result<Response, ApiError> {
    let v = blocking(move || Ok(s.registry.rollback(&caller.user_id, &id, req.revision)?)).await?;
    Ok(Json(v).into_response())
}

async fn audit(State(s): State<Shared>, caller: Caller, Params(filter): Params<AuditFilter>) -> Result<Response, ApiError> {
    let records = blocking(move || Ok(s.registry.query_audit(&caller.user_id, &filter)?)).await?;
    Ok(Json(records).into_response())
}
