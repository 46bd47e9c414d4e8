//! Run queue and worker pool.
//!
//! Jobs wait in a FIFO queue and run on a fixed pool of workers, each of
//! which owns one workbook instance at a time. A worker's instance is thrown
//! away after `max_uses` runs (default 1, so every run starts pristine). A
//! worker that crashes or overruns `job_timeout` is declared dead and
//! replaced, and its job is retried up to `max_retries` times.
//!
//! [`Dispatcher`] holds every scheduling decision as a plain state machine
//! driven by an explicit clock; [`Broker`] runs it with a scheduler thread
//! and one thread per worker.

mod backend;
mod broker;
mod dispatcher;
#[cfg(feature = "fault-injection")]
pub mod faults;
mod journal;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sheetbridge_core::appdef::{Inputs, RunResult};
use sheetbridge_core::WorkbookRef;
use thiserror::Error;

pub use backend::{Backend, BackendError};
pub use broker::{Broker, BrokerBuilder};
pub use dispatcher::{Assignment, AttemptResult, Dispatcher, Effect};
pub use journal::Journal;

pub type JobId = String;
pub type WorkerId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerConfig {
    pub pool_size: usize,
    pub max_uses: u32,
    pub job_timeout_ms: u64,
    pub max_retries: u32,
    pub queue_capacity: usize,
    /// How often the scheduler checks for timeouts when nothing else wakes it.
    pub scheduler_period_ms: u64,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            pool_size: 4,
            max_uses: 1,
            job_timeout_ms: 60_000,
            max_retries: 2,
            queue_capacity: 1000,
            scheduler_period_ms: 100,
        }
    }
}

impl BrokerConfig {
    pub fn validate(&self) -> Result<(), BrokerError> {
        let bad = |reason: &str| Err(BrokerError::InvalidConfig(reason.to_string()));
        if self.pool_size == 0 {
            return bad("pool_size must be at least 1");
        }
        if self.max_uses == 0 {
            return bad("max_uses must be at least 1");
        }
        if self.job_timeout_ms == 0 || self.scheduler_period_ms == 0 {
            return bad("job_timeout_ms and scheduler_period_ms must be positive");
        }
        if self.queue_capacity < self.pool_size {
            return bad("queue_capacity must be at least pool_size");
        }
        Ok(())
    }

    pub fn job_timeout(&self) -> chrono::Duration {
        chrono::Duration::milliseconds(self.job_timeout_ms as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureCode {
    /// Workers kept dying; retries exhausted.
    WorkerLost,
    /// Every attempt overran the job timeout.
    Timeout,
    /// The pinned revisions could not be loaded or run.
    RunFailed,
    /// The run finished but its audit record could not be written, so the
    /// result was withheld.
    AuditFailed,
    /// Cancelled while queued.
    Cancelled,
    /// The broker stopped before the job finished.
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub code: FailureCode,
    pub message: String,
}

/// What to run: the caller resolves the live revision before submitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub user_id: String,
    pub app_id: String,
    pub app_revision: u32,
    pub workbook_ref: WorkbookRef,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: JobId,
    /// Submission order, starting at 1.
    pub seq: u64,
    #[serde(flatten)]
    pub request: JobRequest,
    pub status: JobStatus,
    pub attempts: u32,
    pub enqueued_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkerState {
    Idle,
    Busy,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Worker {
    pub worker_id: WorkerId,
    pub state: WorkerState,
    /// Workbook revision its current instance was loaded from.
    pub loaded: Option<WorkbookRef>,
    /// Runs on the current instance.
    pub uses: u32,
    /// Instances discarded so far.
    pub recycles: u32,
    pub job: Option<JobId>,
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("queue is full ({0} jobs waiting)")]
    QueueFull(usize),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("invalid broker configuration: {0}")]
    InvalidConfig(String),
    #[error("broker is shut down")]
    ShutDown,
    #[error("job journal: {0}")]
    Journal(String),
    #[cfg(feature = "fault-injection")]
    #[error("fault plan: {0}")]
    FaultPlan(String),
}
