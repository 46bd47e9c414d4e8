use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::Utc;
use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Condvar, Mutex};
use sheetbridge_core::appdef::{apply_submission, input_digest, RunOutcome, RunResult};
use sheetbridge_core::Workbook;
use sheetbridge_registry::NewAuditRecord;
use tracing::{error, warn};

#[cfg(feature = "fault-injection")]
use crate::faults::{Fault, FaultPlan, KillPoint};
use crate::{
    Assignment, AttemptResult, Backend, BrokerConfig, BrokerError, Dispatcher, Effect, Job, JobRequest, Journal,
    Worker, WorkerId,
};

pub struct BrokerBuilder {
    config: BrokerConfig,
    backend: Arc<dyn Backend>,
    journal: Option<PathBuf>,
    #[cfg(feature = "fault-injection")]
    faults: Option<FaultPlan>,
}

impl BrokerBuilder {
    pub fn new(config: BrokerConfig, backend: impl Backend) -> Self {
        Self {
            config,
            backend: Arc::new(backend),
            journal: None,
            #[cfg(feature = "fault-injection")]
            faults: None,
        }
    }

    /// Keeps job snapshots in a file so finished jobs survive a restart.
    pub fn journal(mut self, path: impl Into<PathBuf>) -> Self {
        self.journal = Some(path.into());
        self
    }

    /// Overrides any plan named by `BROKER_FAULT_PLAN`.
    #[cfg(feature = "fault-injection")]
    pub fn fault_plan(mut self, plan: FaultPlan) -> Self {
        self.faults = Some(plan);
        self
    }

    pub fn start(self) -> Result<Broker, BrokerError> {
        let mut dispatcher = Dispatcher::new(self.config.clone())?;
        let journal = match &self.journal {
            Some(path) => {
                let (journal, jobs) = Journal::open(path, Utc::now())?;
                dispatcher.restore(jobs);
                Some(Mutex::new(journal))
            }
            None => None,
        };
        #[cfg(feature = "fault-injection")]
        let faults = match self.faults {
            Some(plan) => Some(plan),
            None => FaultPlan::from_env()?,
        };
        let (wake, wake_rx) = bounded(1);
        let workers: Vec<WorkerId> = dispatcher.workers().iter().map(|w| w.worker_id).collect();
        let shared = Arc::new(Shared {
            state: Mutex::new(dispatcher),
            changed: Condvar::new(),
            journal,
            backend: self.backend,
            mailboxes: Mutex::new(HashMap::new()),
            wake,
            threads: Mutex::new(Vec::new()),
            stopping: AtomicBool::new(false),
            #[cfg(feature = "fault-injection")]
            faults,
        });
        for id in workers {
            shared.spawn_worker(id);
        }
        let period = Duration::from_millis(self.config.scheduler_period_ms);
        let s = shared.clone();
        let scheduler = thread::Builder::new()
            .name("broker-scheduler".into())
            .spawn(move || s.schedule(wake_rx, period))
            .expect("spawn scheduler thread");
        shared.threads.lock().push(scheduler);
        Ok(Broker { shared })
    }
}

/// Runs jobs on a pool of worker threads. Dropping it shuts it down.
pub struct Broker {
    shared: Arc<Shared>,
}

impl Broker {
    pub fn builder(config: BrokerConfig, backend: impl Backend) -> BrokerBuilder {
        BrokerBuilder::new(config, backend)
    }

    pub fn config(&self) -> BrokerConfig {
        self.shared.state.lock().config().clone()
    }

    /// Queues a job and returns its QUEUED snapshot without waiting.
    pub fn submit(&self, request: JobRequest) -> Result<Job, BrokerError> {
        if self.shared.stopping.load(Ordering::SeqCst) {
            return Err(BrokerError::ShutDown);
        }
        let job = {
            let mut d = self.shared.state.lock();
            let now = Utc::now();
            let job = d.submit(uuid::Uuid::new_v4().to_string(), request, now)?;
            if let Err(e) = self.shared.journal(&job) {
                d.cancel(&job.job_id, now)?;
                return Err(e);
            }
            job
        };
        self.shared.wake();
        Ok(job)
    }

    pub fn status(&self, job_id: &str) -> Result<Job, BrokerError> {
        self.shared.state.lock().status(job_id)
    }

    /// Waits until the job is DONE or FAILED, or the timeout passes, and
    /// returns its latest snapshot either way.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<Job, BrokerError> {
        let deadline = Instant::now() + timeout;
        let mut d = self.shared.state.lock();
        loop {
            let job = d.status(job_id)?;
            if job.status.is_terminal() || self.shared.changed.wait_until(&mut d, deadline).timed_out() {
                return d.status(job_id);
            }
        }
    }

    /// Waits until the queue is empty and every worker is idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut d = self.shared.state.lock();
        while !d.is_idle() {
            if self.shared.changed.wait_until(&mut d, deadline).timed_out() {
                return d.is_idle();
            }
        }
        true
    }

    /// True when the job was QUEUED and now never runs.
    pub fn cancel(&self, job_id: &str) -> Result<bool, BrokerError> {
        let mut d = self.shared.state.lock();
        match d.cancel(job_id, Utc::now())? {
            Some(job) => {
                self.shared.journal_or_log(&job);
                self.shared.changed.notify_all();
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Live workers, then dead ones.
    pub fn workers(&self) -> Vec<Worker> {
        self.shared.state.lock().workers()
    }

    /// Every job this broker knows, in submission order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs: Vec<Job> = self.shared.state.lock().jobs().cloned().collect();
        jobs.sort_by_key(|j| j.seq);
        jobs
    }

    pub fn check(&self) -> Result<(), String> {
        self.shared.state.lock().check()
    }

    /// Fails queued jobs with INTERRUPTED, lets running jobs finish and
    /// joins every thread.
    pub fn shutdown(&self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        {
            let mut d = self.shared.state.lock();
            for job in d.fail_queued("the broker shut down before the job started", Utc::now()) {
                self.shared.journal_or_log(&job);
            }
            self.shared.changed.notify_all();
        }
        self.shared.mailboxes.lock().clear();
        self.shared.wake();
        loop {
            let handles: Vec<JoinHandle<()>> = std::mem::take(&mut *self.shared.threads.lock());
            if handles.is_empty() {
                break;
            }
            for h in handles {
                let _ = h.join();
            }
        }
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Shared {
    state: Mutex<Dispatcher>,
    changed: Condvar,
    /// Taken only while holding `state`.
    journal: Option<Mutex<Journal>>,
    backend: Arc<dyn Backend>,
    mailboxes: Mutex<HashMap<WorkerId, Sender<Assignment>>>,
    wake: Sender<()>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    stopping: AtomicBool,
    #[cfg(feature = "fault-injection")]
    faults: Option<FaultPlan>,
}

impl Shared {
    fn wake(&self) {
        let _ = self.wake.try_send(());
    }

    fn journal(&self, job: &Job) -> Result<(), BrokerError> {
        match &self.journal {
            Some(j) => j.lock().append(job),
            None => Ok(()),
        }
    }

    fn journal_or_log(&self, job: &Job) {
        if let Err(e) = self.journal(job) {
            error!(job_id = %job.job_id, "{e}");
        }
    }

    fn record_or_log(&self, run: NewAuditRecord) {
        if let Err(e) = self.backend.record(run) {
            error!("{e}");
        }
    }

    fn spawn_worker(self: &Arc<Self>, id: WorkerId) {
        if self.stopping.load(Ordering::SeqCst) {
            return;
        }
        let (tx, rx) = unbounded();
        self.mailboxes.lock().insert(id, tx);
        let shared = self.clone();
        let handle = thread::Builder::new()
            .name(format!("broker-worker-{id}"))
            .spawn(move || shared.work(id, rx))
            .expect("spawn worker thread");
        let mut threads = self.threads.lock();
        threads.retain(|h| !h.is_finished());
        threads.push(handle);
    }

    fn schedule(self: Arc<Self>, wake: Receiver<()>, period: Duration) {
        loop {
            if let Err(RecvTimeoutError::Disconnected) = wake.recv_timeout(period) {
                return;
            }
            if self.stopping.load(Ordering::SeqCst) {
                return;
            }
            self.cycle();
        }
    }

    /// One scheduler step: time out overdue attempts, then hand queued jobs
    /// to idle workers.
    fn cycle(self: &Arc<Self>) {
        {
            let mut d = self.state.lock();
            let now = Utc::now();
            let expired = d.expire(now);
            for effect in &expired {
                let message = format!("attempt {} exceeded {} ms", effect.job.attempts, d.config().job_timeout_ms);
                self.settle(effect, Some(message));
            }
            let assignments = d.dispatch(now);
            let mailboxes = self.mailboxes.lock();
            for a in &assignments {
                match mailboxes.get(&a.worker_id) {
                    Some(tx) if tx.send(a.clone()).is_ok() => {}
                    // the thread is gone; the attempt will time out and retry
                    _ => warn!(worker_id = a.worker_id, "no thread for assigned worker"),
                }
            }
            if !expired.is_empty() || !assignments.is_empty() {
                self.changed.notify_all();
            }
        }
    }

    /// Follows up a state change: replaces a dead worker's thread, audits
    /// an attempt that ended without a result and journals a finished job.
    /// Called under the state lock, so the record precedes any retry.
    fn settle(self: &Arc<Self>, effect: &Effect, lost: Option<String>) {
        if let Some((dead, replacement)) = effect.replaced {
            self.mailboxes.lock().remove(&dead);
            self.spawn_worker(replacement);
        }
        if let Some(message) = lost {
            let message = if effect.retried { format!("{message}; retrying") } else { message };
            self.record_or_log(audit_record(&effect.job, effect.job.attempts, None, message));
        }
        if effect.job.status.is_terminal() {
            self.journal_or_log(&effect.job);
        }
    }

    fn work(self: Arc<Self>, id: WorkerId, mailbox: Receiver<Assignment>) {
        let mut instance: Option<Workbook> = None;
        while let Ok(a) = mailbox.recv() {
            if a.fresh {
                instance = None;
            }
            let result = self.attempt(&a, &mut instance);
            match self.report(id, &a, result) {
                Some(true) => {}
                Some(false) => instance = None,
                None => return,
            }
        }
    }

    fn attempt(&self, a: &Assignment, instance: &mut Option<Workbook>) -> AttemptResult {
        #[cfg(feature = "fault-injection")]
        let faults = self.faults.as_ref().map_or(&[][..], |p| p.events(a.seq, a.attempt));
        #[cfg(feature = "fault-injection")]
        for fault in faults {
            if let Fault::Delay(d) = fault {
                thread::sleep(*d);
            }
        }

        let req = &a.request;
        let (def, pristine) = match self.backend.load(&req.app_id, req.app_revision) {
            Ok(loaded) => loaded,
            Err(e) => return AttemptResult::Fatal(e.to_string()),
        };
        if def.workbook_ref != req.workbook_ref {
            return AttemptResult::Fatal(format!(
                "{}@{} pins {}, not {}",
                req.app_id, req.app_revision, def.workbook_ref, req.workbook_ref
            ));
        }
        let wb = instance.get_or_insert_with(|| (*pristine).clone());

        #[cfg(feature = "fault-injection")]
        if faults.contains(&Fault::Kill(KillPoint::Before)) {
            return AttemptResult::Crashed("worker killed before the run".into());
        }
        let run = catch_unwind(AssertUnwindSafe(|| {
            #[cfg(feature = "fault-injection")]
            if faults.contains(&Fault::Panic) {
                panic!("injected panic in job {} attempt {}", a.seq, a.attempt);
            }
            apply_submission(&def, wb, &req.inputs, req.pressed.as_deref())
        }));
        match run {
            Err(_) => {
                *instance = None;
                AttemptResult::Crashed("worker panicked during the run".into())
            }
            Ok(Err(e)) => AttemptResult::Fatal(e.to_string()),
            Ok(Ok(result)) => {
                #[cfg(feature = "fault-injection")]
                if faults.contains(&Fault::Kill(KillPoint::After)) {
                    return AttemptResult::Crashed("worker killed after the run".into());
                }
                AttemptResult::Finished(result)
            }
        }
    }

    /// Reports an attempt. A result is audited before the job can become
    /// DONE. Returns `None` when this worker is dead, `Some(keep)` otherwise,
    /// where `keep` says whether its instance may serve the next job.
    fn report(self: &Arc<Self>, id: WorkerId, a: &Assignment, result: AttemptResult) -> Option<bool> {
        // A worker that was timed out loses the claim and discards its work.
        let job = self.state.lock().claim(id, &a.job_id)?;
        let (result, lost) = match result {
            AttemptResult::Finished(run) => {
                let message = run.message.clone().unwrap_or_default();
                match self.backend.record(audit_record(&job, a.attempt, Some(&run), message)) {
                    Ok(()) => (AttemptResult::Finished(run), None),
                    Err(e) => (AttemptResult::AuditFailed(e.to_string()), None),
                }
            }
            AttemptResult::Crashed(m) => (AttemptResult::Crashed(m.clone()), Some(m)),
            AttemptResult::Fatal(m) => (AttemptResult::Fatal(m.clone()), Some(m)),
            AttemptResult::AuditFailed(m) => (AttemptResult::AuditFailed(m), None),
        };
        let keep = {
            let mut d = self.state.lock();
            let effect = d.complete(id, &a.job_id, result, Utc::now()).expect("attempt was claimed");
            self.settle(&effect, lost);
            self.changed.notify_all();
            d.worker(id).map(|w| w.loaded.is_some())
        };
        self.wake();
        keep
    }
}

fn audit_record(job: &Job, attempt: u32, result: Option<&RunResult>, message: String) -> NewAuditRecord {
    let req = &job.request;
    NewAuditRecord {
        user_id: req.user_id.clone(),
        app_id: req.app_id.clone(),
        app_revision: req.app_revision,
        workbook_id: req.workbook_ref.id.clone(),
        workbook_revision: req.workbook_ref.revision,
        job_id: Some(job.job_id.clone()),
        attempt,
        inputs: req.inputs.clone(),
        pressed: req.pressed.clone(),
        input_digest: input_digest(&req.inputs, req.pressed.as_deref()),
        output_digest: result.map(RunResult::output_digest),
        outcome: result.map_or(RunOutcome::SystemError, |r| r.outcome),
        message,
    }
}
