//! Scheduling decisions with no threads and no clock of their own.

use std::collections::{BTreeMap, HashMap, VecDeque};

use chrono::{DateTime, Utc};
use sheetbridge_core::appdef::RunResult;

use crate::{
    BrokerConfig, BrokerError, Failure, FailureCode, Job, JobId, JobRequest, JobStatus, Worker, WorkerId, WorkerState,
};

/// A job handed to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub worker_id: WorkerId,
    pub job_id: JobId,
    pub seq: u64,
    pub attempt: u32,
    /// Load a fresh instance of the pinned workbook before running.
    pub fresh: bool,
    pub request: JobRequest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttemptResult {
    /// The run produced a result (any business outcome) and it was audited.
    Finished(RunResult),
    /// The worker died or was killed; retryable.
    Crashed(String),
    /// The run cannot succeed on retry (unloadable revision, engine refusal).
    Fatal(String),
    /// The result exists but could not be audited; it is withheld.
    AuditFailed(String),
}

/// What a completion or timeout changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    /// Job after the change.
    pub job: Job,
    /// The job went back to the queue.
    pub retried: bool,
    /// Worker declared dead, and the worker created in its place.
    pub replaced: Option<(WorkerId, WorkerId)>,
}

#[derive(Debug)]
struct Entry {
    job: Job,
    worker: Option<WorkerId>,
    /// A worker is reporting this attempt; timeouts no longer apply.
    claimed: bool,
}

#[derive(Debug)]
pub struct Dispatcher {
    config: BrokerConfig,
    jobs: HashMap<JobId, Entry>,
    queue: VecDeque<JobId>,
    workers: BTreeMap<WorkerId, Worker>,
    dead: Vec<Worker>,
    next_worker: WorkerId,
    next_seq: u64,
}

impl Dispatcher {
    pub fn new(config: BrokerConfig) -> Result<Self, BrokerError> {
        config.validate()?;
        let mut d = Self {
            config,
            jobs: HashMap::new(),
            queue: VecDeque::new(),
            workers: BTreeMap::new(),
            dead: Vec::new(),
            next_worker: 1,
            next_seq: 1,
        };
        for _ in 0..d.config.pool_size {
            d.spawn_worker();
        }
        Ok(d)
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    fn spawn_worker(&mut self) -> WorkerId {
        let id = self.next_worker;
        self.next_worker += 1;
        self.workers.insert(
            id,
            Worker {
                worker_id: id,
                state: WorkerState::Idle,
                loaded: None,
                uses: 0,
                recycles: 0,
                job: None,
            },
        );
        id
    }

    /// Adds finished jobs from a previous run of the broker.
    pub fn restore(&mut self, jobs: impl IntoIterator<Item = Job>) {
        for job in jobs {
            debug_assert!(job.status.is_terminal());
            self.next_seq = self.next_seq.max(job.seq + 1);
            self.jobs.insert(
                job.job_id.clone(),
                Entry {
                    job,
                    worker: None,
                    claimed: false,
                },
            );
        }
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn submit(&mut self, job_id: JobId, request: JobRequest, now: DateTime<Utc>) -> Result<Job, BrokerError> {
        if self.queue.len() >= self.config.queue_capacity {
            return Err(BrokerError::QueueFull(self.queue.len()));
        }
        let job = Job {
            job_id: job_id.clone(),
            seq: self.next_seq,
            request,
            status: JobStatus::Queued,
            attempts: 0,
            enqueued_at: now,
            started_at: None,
            finished_at: None,
            result: None,
            failure: None,
        };
        self.next_seq += 1;
        self.queue.push_back(job_id.clone());
        self.jobs.insert(
            job_id,
            Entry {
                job: job.clone(),
                worker: None,
                claimed: false,
            },
        );
        Ok(job)
    }

    /// Gives every idle worker the oldest queued job.
    pub fn dispatch(&mut self, now: DateTime<Utc>) -> Vec<Assignment> {
        let mut out = Vec::new();
        let idle: Vec<WorkerId> = self
            .workers
            .values()
            .filter(|w| w.state == WorkerState::Idle)
            .map(|w| w.worker_id)
            .collect();
        for worker_id in idle {
            let Some(job_id) = self.queue.pop_front() else { break };
            let entry = self.jobs.get_mut(&job_id).expect("queued job exists");
            let worker = self.workers.get_mut(&worker_id).expect("idle worker exists");
            let wanted = &entry.job.request.workbook_ref;
            let fresh = worker.loaded.as_ref() != Some(wanted);
            if fresh {
                if worker.loaded.is_some() {
                    worker.recycles += 1;
                }
                worker.loaded = Some(wanted.clone());
                worker.uses = 0;
            }
            worker.state = WorkerState::Busy;
            worker.job = Some(job_id.clone());
            entry.job.status = JobStatus::Running;
            entry.job.attempts += 1;
            entry.job.started_at = Some(now);
            entry.worker = Some(worker_id);
            entry.claimed = false;
            out.push(Assignment {
                worker_id,
                job_id,
                seq: entry.job.seq,
                attempt: entry.job.attempts,
                fresh,
                request: entry.job.request.clone(),
            });
        }
        out
    }

    /// Lets a worker report on its attempt. Fails when the worker is no
    /// longer the job's owner (declared dead after a timeout, for example);
    /// such a worker must discard its result.
    pub fn claim(&mut self, worker_id: WorkerId, job_id: &str) -> Option<Job> {
        let worker = self.workers.get(&worker_id)?;
        if worker.state != WorkerState::Busy || worker.job.as_deref() != Some(job_id) {
            return None;
        }
        let entry = self.jobs.get_mut(job_id)?;
        if entry.claimed || entry.worker != Some(worker_id) || entry.job.status != JobStatus::Running {
            return None;
        }
        entry.claimed = true;
        Some(entry.job.clone())
    }

    /// Records the end of a claimed attempt.
    pub fn complete(
        &mut self,
        worker_id: WorkerId,
        job_id: &str,
        result: AttemptResult,
        now: DateTime<Utc>,
    ) -> Option<Effect> {
        let entry = self.jobs.get(job_id)?;
        if !entry.claimed || entry.worker != Some(worker_id) {
            return None;
        }
        Some(match result {
            AttemptResult::Finished(run) => {
                let worker = self.workers.get_mut(&worker_id).expect("owner is alive");
                worker.uses += 1;
                if worker.uses >= self.config.max_uses {
                    worker.loaded = None;
                    worker.uses = 0;
                    worker.recycles += 1;
                }
                self.release(worker_id);
                let entry = self.jobs.get_mut(job_id).expect("job exists");
                entry.job.status = JobStatus::Done;
                entry.job.result = Some(run);
                entry.job.finished_at = Some(now);
                entry.worker = None;
                Effect {
                    job: entry.job.clone(),
                    retried: false,
                    replaced: None,
                }
            }
            AttemptResult::Crashed(message) => self.lose_worker(worker_id, job_id, FailureCode::WorkerLost, message, now),
            AttemptResult::Fatal(_) | AttemptResult::AuditFailed(_) => {
                let (code, message) = match result {
                    AttemptResult::Fatal(m) => (FailureCode::RunFailed, m),
                    AttemptResult::AuditFailed(m) => (FailureCode::AuditFailed, m),
                    _ => unreachable!(),
                };
                let worker = self.workers.get_mut(&worker_id).expect("owner is alive");
                worker.loaded = None;
                worker.uses = 0;
                worker.recycles += 1;
                self.release(worker_id);
                let entry = self.jobs.get_mut(job_id).expect("job exists");
                entry.job.status = JobStatus::Failed;
                entry.job.failure = Some(Failure { code, message });
                entry.job.finished_at = Some(now);
                entry.worker = None;
                Effect {
                    job: entry.job.clone(),
                    retried: false,
                    replaced: None,
                }
            }
        })
    }

    fn release(&mut self, worker_id: WorkerId) {
        let worker = self.workers.get_mut(&worker_id).expect("worker exists");
        worker.state = WorkerState::Idle;
        worker.job = None;
    }

    /// Declares the worker dead, replaces it, and retries or fails the job.
    fn lose_worker(
        &mut self,
        worker_id: WorkerId,
        job_id: &str,
        code: FailureCode,
        message: String,
        now: DateTime<Utc>,
    ) -> Effect {
        let mut dead = self.workers.remove(&worker_id).expect("worker exists");
        dead.state = WorkerState::Dead;
        dead.job = None;
        self.dead.push(dead);
        let replacement = self.spawn_worker();

        let max_attempts = self.config.max_retries + 1;
        let entry = self.jobs.get_mut(job_id).expect("job exists");
        entry.worker = None;
        entry.claimed = false;
        let retried = entry.job.attempts < max_attempts;
        if retried {
            entry.job.status = JobStatus::Queued;
            // it is older than anything still waiting
            self.queue.push_front(job_id.to_string());
        } else {
            entry.job.status = JobStatus::Failed;
            entry.job.failure = Some(Failure {
                code,
                message: format!("{message} (after {} attempts)", entry.job.attempts),
            });
            entry.job.finished_at = Some(now);
        }
        Effect {
            job: entry.job.clone(),
            retried,
            replaced: Some((worker_id, replacement)),
        }
    }

    /// Declares dead every worker whose unclaimed attempt has run longer
    /// than the job timeout.
    pub fn expire(&mut self, now: DateTime<Utc>) -> Vec<Effect> {
        let timeout = self.config.job_timeout();
        let overdue: Vec<(WorkerId, JobId)> = self
            .workers
            .values()
            .filter_map(|w| {
                let job_id = w.job.as_ref()?;
                let entry = &self.jobs[job_id];
                let started = entry.job.started_at?;
                (!entry.claimed && now - started >= timeout).then(|| (w.worker_id, job_id.clone()))
            })
            .collect();
        overdue
            .into_iter()
            .map(|(w, j)| {
                let message = format!("attempt exceeded {} ms", self.config.job_timeout_ms);
                self.lose_worker(w, &j, FailureCode::Timeout, message, now)
            })
            .collect()
    }

    /// Cancels a queued job. Running and finished jobs are left alone.
    pub fn cancel(&mut self, job_id: &str, now: DateTime<Utc>) -> Result<Option<Job>, BrokerError> {
        let entry = self
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| BrokerError::UnknownJob(job_id.to_string()))?;
        if entry.job.status != JobStatus::Queued {
            return Ok(None);
        }
        self.queue.retain(|j| j != job_id);
        entry.job.status = JobStatus::Failed;
        entry.job.failure = Some(Failure {
            code: FailureCode::Cancelled,
            message: "cancelled before it started".into(),
        });
        entry.job.finished_at = Some(now);
        Ok(Some(entry.job.clone()))
    }

    /// Fails every queued job, as on shutdown.
    pub fn fail_queued(&mut self, message: &str, now: DateTime<Utc>) -> Vec<Job> {
        let mut out = Vec::new();
        while let Some(job_id) = self.queue.pop_front() {
            let entry = self.jobs.get_mut(&job_id).expect("queued job exists");
            entry.job.status = JobStatus::Failed;
            entry.job.failure = Some(Failure {
                code: FailureCode::Interrupted,
                message: message.to_string(),
            });
            entry.job.finished_at = Some(now);
            out.push(entry.job.clone());
        }
        out
    }

    pub fn status(&self, job_id: &str) -> Result<Job, BrokerError> {
        self.jobs
            .get(job_id)
            .map(|e| e.job.clone())
            .ok_or_else(|| BrokerError::UnknownJob(job_id.to_string()))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values().map(|e| &e.job)
    }

    /// Live workers, then dead ones.
    pub fn workers(&self) -> Vec<Worker> {
        self.workers.values().chain(&self.dead).cloned().collect()
    }

    pub fn worker(&self, worker_id: WorkerId) -> Option<&Worker> {
        self.workers.get(&worker_id)
    }

    pub fn is_alive(&self, worker_id: WorkerId) -> bool {
        self.workers.contains_key(&worker_id)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.workers.values().all(|w| w.state == WorkerState::Idle)
    }

    /// Checks the bookkeeping invariants; returns the first violation.
    pub fn check(&self) -> Result<(), String> {
        let max_attempts = self.config.max_retries + 1;
        let mut running = 0;
        for entry in self.jobs.values() {
            let job = &entry.job;
            if job.attempts > max_attempts {
                return Err(format!("{} made {} attempts", job.job_id, job.attempts));
            }
            match job.status {
                JobStatus::Done if job.result.is_none() => return Err(format!("{} done without result", job.job_id)),
                JobStatus::Failed if job.failure.is_none() => return Err(format!("{} failed without reason", job.job_id)),
                JobStatus::Running => {
                    running += 1;
                    let owners = self
                        .workers
                        .values()
                        .filter(|w| w.job.as_deref() == Some(job.job_id.as_str()))
                        .count();
                    if owners != 1 || entry.worker.is_none() {
                        return Err(format!("{} is running on {owners} workers", job.job_id));
                    }
                }
                JobStatus::Queued if !self.queue.contains(&job.job_id) => {
                    return Err(format!("{} is queued but not in the queue", job.job_id))
                }
                _ => {}
            }
        }
        let busy = self.workers.values().filter(|w| w.state == WorkerState::Busy).count();
        if busy != running {
            return Err(format!("{busy} busy workers for {running} running jobs"));
        }
        if self.workers.len() != self.config.pool_size {
            return Err(format!("{} live workers, pool is {}", self.workers.len(), self.config.pool_size));
        }
        if self.workers.values().any(|w| w.uses >= self.config.max_uses) {
            return Err("a worker kept an instance past max_uses".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use sheetbridge_core::WorkbookRef;

    fn request(app: &str) -> JobRequest {
        JobRequest {
            user_id: "u".into(),
            app_id: app.into(),
            app_revision: 1,
            workbook_ref: WorkbookRef::new("wb", 1),
            inputs: Default::default(),
            pressed: None,
        }
    }

    fn config(pool: usize) -> BrokerConfig {
        BrokerConfig {
            pool_size: pool,
            queue_capacity: 3,
            job_timeout_ms: 1000,
            ..Default::default()
        }
    }

    fn t(ms: i64) -> DateTime<Utc> {
        DateTime::UNIX_EPOCH + Duration::milliseconds(ms)
    }

    fn ok() -> AttemptResult {
        AttemptResult::Finished(RunResult::system_error("stand-in"))
    }

    #[test]
    fn two_workers_three_jobs() {
        let mut d = Dispatcher::new(config(2)).unwrap();
        for j in ["a", "b", "c"] {
            d.submit(j.into(), request(j), t(0)).unwrap();
        }
        let first = d.dispatch(t(1));
        assert_eq!(first.iter().map(|a| a.job_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(first.iter().all(|a| a.fresh && a.attempt == 1));
        assert_eq!(d.queued(), 1);
        assert!(d.dispatch(t(2)).is_empty());
        assert_eq!(d.queued(), 1);
        d.check().unwrap();

        let a = &first[0];
        assert!(d.claim(a.worker_id, &a.job_id).is_some());
        let effect = d.complete(a.worker_id, &a.job_id, ok(), t(3)).unwrap();
        assert_eq!(effect.job.status, JobStatus::Done);
        let next = d.dispatch(t(4));
        assert_eq!(next.len(), 1);
        assert_eq!(next[0].job_id, "c");
        // max_uses = 1: the instance was thrown away after one run
        assert!(next[0].fresh);
        assert_eq!(d.workers()[0].recycles, 1);
        d.check().unwrap();
    }

    #[test]
    fn queue_capacity() {
        let mut d = Dispatcher::new(config(1)).unwrap();
        for j in ["a", "b", "c"] {
            d.submit(j.into(), request(j), t(0)).unwrap();
        }
        assert!(matches!(d.submit("d".into(), request("d"), t(0)), Err(BrokerError::QueueFull(3))));
        d.dispatch(t(0));
        d.submit("d".into(), request("d"), t(0)).unwrap();
    }

    #[test]
    fn reuse_when_max_uses_allows() {
        let mut d = Dispatcher::new(BrokerConfig {
            max_uses: 2,
            ..config(1)
        })
        .unwrap();
        let mut fresh = Vec::new();
        for j in ["a", "b", "c"] {
            d.submit(j.into(), request(j), t(0)).unwrap();
        }
        for _ in 0..3 {
            let a = d.dispatch(t(0)).pop().unwrap();
            fresh.push(a.fresh);
            d.claim(a.worker_id, &a.job_id).unwrap();
            d.complete(a.worker_id, &a.job_id, ok(), t(0)).unwrap();
            d.check().unwrap();
        }
        assert_eq!(fresh, [true, false, true]);
    }

    #[test]
    fn crash_retries_then_fails() {
        let mut d = Dispatcher::new(config(1)).unwrap();
        d.submit("a".into(), request("a"), t(0)).unwrap();
        let mut workers = Vec::new();
        for attempt in 1..=3 {
            let a = d.dispatch(t(0)).pop().unwrap();
            assert_eq!(a.attempt, attempt);
            assert!(a.fresh);
            workers.push(a.worker_id);
            d.claim(a.worker_id, "a").unwrap();
            let e = d.complete(a.worker_id, "a", AttemptResult::Crashed("boom".into()), t(0)).unwrap();
            assert_eq!(e.retried, attempt < 3);
            assert!(!d.is_alive(a.worker_id));
            d.check().unwrap();
        }
        let job = d.status("a").unwrap();
        assert_eq!(job.status, JobStatus::Failed);
        assert_eq!(job.failure.unwrap().code, FailureCode::WorkerLost);
        assert_eq!(workers, [1, 2, 3]);
        assert!(d.dispatch(t(0)).is_empty());
    }

    #[test]
    fn timeouts_fence_out_late_reports() {
        let mut d = Dispatcher::new(BrokerConfig {
            max_retries: 1,
            ..config(1)
        })
        .unwrap();
        d.submit("a".into(), request("a"), t(0)).unwrap();
        let slow = d.dispatch(t(0)).pop().unwrap();
        assert!(d.expire(t(999)).is_empty());
        let e = d.expire(t(1000));
        assert_eq!(e.len(), 1);
        assert!(e[0].retried);
        assert!(d.claim(slow.worker_id, "a").is_none(), "dead worker cannot report");

        let retry = d.dispatch(t(1001)).pop().unwrap();
        assert_eq!(retry.attempt, 2);
        // a claimed attempt is not timed out while it reports
        d.claim(retry.worker_id, "a").unwrap();
        assert!(d.expire(t(5000)).is_empty());
        d.complete(retry.worker_id, "a", ok(), t(5001)).unwrap();
        assert_eq!(d.status("a").unwrap().status, JobStatus::Done);

        d.submit("b".into(), request("b"), t(6000)).unwrap();
        d.dispatch(t(6000));
        d.expire(t(7000));
        d.dispatch(t(7000));
        let e = d.expire(t(8000));
        assert!(!e[0].retried);
        assert_eq!(e[0].job.failure.as_ref().unwrap().code, FailureCode::Timeout);
        d.check().unwrap();
    }

    #[test]
    fn cancel_only_queued() {
        let mut d = Dispatcher::new(config(1)).unwrap();
        d.submit("a".into(), request("a"), t(0)).unwrap();
        d.submit("b".into(), request("b"), t(0)).unwrap();
        d.dispatch(t(0));
        assert!(d.cancel("a", t(0)).unwrap().is_none());
        let b = d.cancel("b", t(0)).unwrap().unwrap();
        assert_eq!(b.failure.unwrap().code, FailureCode::Cancelled);
        assert!(d.cancel("b", t(0)).unwrap().is_none());
        assert!(matches!(d.cancel("zz", t(0)), Err(BrokerError::UnknownJob(_))));
        assert_eq!(d.queued(), 0);
        d.check().unwrap();
    }

    #[test]
    fn business_failures_do_not_retry() {
        let mut d = Dispatcher::new(config(1)).unwrap();
        d.submit("a".into(), request("a"), t(0)).unwrap();
        let a = d.dispatch(t(0)).pop().unwrap();
        d.claim(a.worker_id, "a").unwrap();
        let mut run = RunResult::system_error("x");
        run.outcome = sheetbridge_core::appdef::RunOutcome::ActionError;
        let e = d.complete(a.worker_id, "a", AttemptResult::Finished(run), t(0)).unwrap();
        assert_eq!(e.job.status, JobStatus::Done);
        assert_eq!(e.job.attempts, 1);
        assert!(d.is_alive(a.worker_id));
    }
}
