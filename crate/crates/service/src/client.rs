//! Typed client for the `/api/v1` surface, used by the CLI.

use axum::http::StatusCode;
use reqwest::RequestBuilder;
use serde::de::DeserializeOwned;
use sheetbridge_broker::Job;
use sheetbridge_core::appdef::ReportDocument;
use sheetbridge_registry::{AppSummary, AuditFilter, AuditRecord, StoredVersion};

use crate::api::{LiveAppView, PublishRequest, RollbackRequest, RunAccepted, RunRequest, WorkbookUpload};
use crate::error::{ApiError, ErrorBody, ErrorCode};

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::Client,
}

impl Client {
    /// `server` is the origin, e.g. `http://127.0.0.1:8080`.
    pub fn new(server: &str, token: Option<String>) -> Self {
        Self {
            base: format!("{}/api/v1", server.trim_end_matches('/')),
            token,
            http: reqwest::Client::new(),
        }
    }

    fn get(&self, path: &str) -> RequestBuilder {
        self.auth(self.http.get(format!("{}{path}", self.base)))
    }

    fn post(&self, path: &str) -> RequestBuilder {
        self.auth(self.http.post(format!("{}{path}", self.base)))
    }

    fn auth(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    /// Status and raw body, for callers that compare bytes.
    pub async fn get_raw(&self, path: &str) -> Result<(StatusCode, Vec<u8>), ApiError> {
        let resp = self.get(path).send().await.map_err(unreachable)?;
        let status = StatusCode::from_u16(resp.status().as_u16()).expect("valid status");
        let body = resp.bytes().await.map_err(unreachable)?;
        Ok((status, body.to_vec()))
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ApiError> {
        let resp = req.send().await.map_err(unreachable)?;
        let status = StatusCode::from_u16(resp.status().as_u16()).expect("valid status");
        let body = resp.bytes().await.map_err(unreachable)?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| {
                ApiError::new(status, ErrorCode::Internal, format!("unexpected response body: {e}"))
            });
        }
        match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(ErrorBody { error }) => Err(ApiError { status, ..error }),
            Err(_) => Err(ApiError::new(status, ErrorCode::Internal, format!("HTTP {status}"))),
        }
    }

    pub async fn list_apps(&self) -> Result<Vec<AppSummary>, ApiError> {
        self.send(self.get("/apps")).await
    }

    pub async fn app(&self, app_id: &str) -> Result<LiveAppView, ApiError> {
        self.send(self.get(&format!("/apps/{app_id}"))).await
    }

    pub async fn submit(&self, app_id: &str, run: &RunRequest) -> Result<RunAccepted, ApiError> {
        self.send(self.post(&format!("/apps/{app_id}/runs")).json(run)).await
    }

    pub async fn run(&self, job_id: &str) -> Result<Job, ApiError> {
        self.send(self.get(&format!("/runs/{job_id}"))).await
    }

    pub async fn report(&self, job_id: &str) -> Result<ReportDocument, ApiError> {
        self.send(self.get(&format!("/runs/{job_id}/report"))).await
    }

    /// Polls until the run is DONE or FAILED.
    pub async fn wait(&self, job_id: &str, timeout: std::time::Duration) -> Result<Job, ApiError> {
        let deadline = tokio::time::Instant::now() + timeout;
        let mut delay = std::time::Duration::from_millis(5);
        loop {
            let job = self.run(job_id).await?;
            if job.status.is_terminal() || tokio::time::Instant::now() >= deadline {
                return Ok(job);
            }
            tokio::time::sleep(delay).await;
            delay = (delay * 2).min(std::time::Duration::from_millis(200));
        }
    }

    pub async fn upload_workbook(&self, workbook_id: &str, content: &str) -> Result<StoredVersion, ApiError> {
        let body = WorkbookUpload {
            workbook_id: workbook_id.to_string(),
            content: content.to_string(),
        };
        self.send(self.post("/admin/workbooks").json(&body)).await
    }

    pub async fn upload_appdef(&self, document: &serde_json::Value) -> Result<StoredVersion, ApiError> {
        self.send(self.post("/admin/appdefs").json(document)).await
    }

    pub async fn versions(&self, asset_id: &str) -> Result<Vec<StoredVersion>, ApiError> {
        self.send(self.get(&format!("/admin/assets/{asset_id}/versions"))).await
    }

    pub async fn publish(&self, app_id: &str, revision: u32, note: &str) -> Result<StoredVersion, ApiError> {
        let body = PublishRequest {
            revision,
            note: note.to_string(),
        };
        self.send(self.post(&format!("/admin/appdefs/{app_id}/publish")).json(&body)).await
    }

    pub async fn rollback(&self, app_id: &str, revision: u32) -> Result<StoredVersion, ApiError> {
        let body = RollbackRequest { revision };
        self.send(self.post(&format!("/admin/appdefs/{app_id}/rollback")).json(&body)).await
    }

    pub async fn audit(&self, filter: &AuditFilter) -> Result<Vec<AuditRecord>, ApiError> {
        self.send(self.get("/admin/audit").query(filter)).await
    }
}

fn unreachable(e: reqwest::Error) -> ApiError {
    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::Internal, format!("request failed: {e}"))
}
