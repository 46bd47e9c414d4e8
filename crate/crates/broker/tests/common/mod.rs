//! A stateful fixture app and the kill-schedule and isolation harnesses.

#![allow(dead_code)]

use std::sync::{Arc, Once};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sheetbridge_broker::faults::{Fault, FaultPlan, KillPoint};
use sheetbridge_broker::{Broker, BrokerConfig, FailureCode, JobRequest, JobStatus};
use sheetbridge_core::appdef::{apply_submission, Output, Role, RunOutcome};
use sheetbridge_core::{CellValue, WorkbookRef};
use sheetbridge_registry::{AssetKind, Registry, User};

pub const ADMIN: &str = "admin";
pub const USER: &str = "user";
pub const APP: &str = "tally";

/// `Add` copies `Acc + Input` into `Acc`, so a reused instance carries the
/// previous job's total into the next one. `Guard` fails when the input is
/// negative.
pub const WORKBOOK: &str = "workbook tally\nsheet S\ncell A1 = 0\ncell B1 = 0\ncell B2 := B1+A1\ncell C1 = 0\n\
name Input = S!A1\nname Acc = S!B1\nname Next = S!B2\nname Status = S!C1\n\
action Add status=S!C1\n  failif \"negative input\" S!A1<0\n  copy S!B2 -> S!B1\n";

pub fn app_doc(wb_rev: u32) -> String {
    json!({
        "app_id": APP,
        "title": "Tally",
        "workbook_ref": {"id": "tally-book", "revision": wb_rev},
        "root": {"id": "tabs", "type": "tabbed_pane", "tabs": [{"id": "main", "label": "Main", "children": [
            {"id": "x", "type": "input_field", "label": "X", "binding": "Input", "datatype": "NUMBER",
             "validators": [{"kind": "numeric_range", "max": 1000000}]},
            {"id": "add", "type": "button", "label": "Add", "action": "Add"},
            {"id": "acc", "type": "output_field", "label": "Total", "binding": "Acc"}
        ]}]},
        "report": {"sections": [{"type": "paragraph", "text": "Total {Acc}"}]}
    })
    .to_string()
}

/// Registry with the tally app published at revision 1.
pub fn registry(dir: &std::path::Path) -> Arc<Registry> {
    let reg = Registry::open(dir).unwrap();
    reg.set_user(User::new(ADMIN, Role::Admin));
    reg.set_user(User::new(USER, Role::EndUser).with_grant(APP));
    let wb = reg.upload(ADMIN, AssetKind::Workbook, Some("tally-book"), WORKBOOK).unwrap();
    let app = reg.upload(ADMIN, AssetKind::Appdef, None, &app_doc(wb.revision)).unwrap();
    reg.approve_and_publish(ADMIN, APP, app.revision, "initial").unwrap();
    Arc::new(reg)
}

pub fn request(x: f64) -> JobRequest {
    JobRequest {
        user_id: USER.into(),
        app_id: APP.into(),
        app_revision: 1,
        workbook_ref: WorkbookRef::new("tally-book", 1),
        inputs: [("x".to_string(), json!(x))].into(),
        pressed: Some("add".into()),
    }
}

pub fn total(job: &sheetbridge_broker::Job) -> Option<f64> {
    match job.result.as_ref()?.outputs.get("acc")? {
        Output::Field {
            value: CellValue::Number(n),
            ..
        } => Some(*n),
        _ => None,
    }
}

/// Keeps injected panics out of the test output.
pub fn quiet_injected_panics() {
    static HOOK: Once = Once::new();
    HOOK.call_once(|| {
        let default = std::panic::take_hook();
        std::panic::set_hook(Box::new(move |info| {
            let injected = info
                .payload()
                .downcast_ref::<String>()
                .is_some_and(|m| m.starts_with("injected panic"));
            if !injected {
                default(info);
            }
        }));
    });
}

pub fn config(pool_size: usize, max_uses: u32) -> BrokerConfig {
    BrokerConfig {
        pool_size,
        max_uses,
        scheduler_period_ms: 5,
        ..Default::default()
    }
}

#[derive(Debug, Default)]
pub struct KillReport {
    pub schedules: usize,
    pub jobs: usize,
    pub kills: usize,
    /// DONE jobs whose result reached the caller.
    pub delivered: usize,
    /// Jobs not in exactly one terminal state, or in the wrong one.
    pub lost_or_wrong: usize,
    /// DONE jobs without exactly one OK audit record, or FAILED ones with any.
    pub audit_mismatches: usize,
    /// DONE results that differ from a fresh-instance run.
    pub result_mismatches: usize,
    pub invariant_violations: usize,
}

impl KillReport {
    pub fn ok(&self) -> bool {
        self.lost_or_wrong == 0 && self.audit_mismatches == 0 && self.result_mismatches == 0 && self.invariant_violations == 0
    }
}

/// Runs `schedules` seeded fault plans. Each kills, panics or stalls
/// workers at random attempts of `jobs_per` jobs; a job killed on every
/// allowed attempt must end FAILED, every other job DONE with one OK
/// audit record and the same result as a fresh run.
pub fn kill_schedules(reg: &Arc<Registry>, schedules: usize, jobs_per: usize, seed: u64) -> KillReport {
    quiet_injected_panics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = KillReport::default();
    let (def, pristine) = (reg.app(APP, 1).unwrap(), reg.workbook("tally-book", 1).unwrap());
    for _ in 0..schedules {
        let config = BrokerConfig {
            job_timeout_ms: 150,
            ..config(rng.gen_range(1..=3), 1)
        };
        let max_attempts = config.max_retries + 1;
        let mut plan = FaultPlan::new();
        let mut expected_kills = Vec::new();
        for seq in 1..=jobs_per as u64 {
            // mostly survivable schedules, sometimes one that exhausts retries
            let kills = match rng.gen_range(0..10) {
                0..=2 => 0,
                3..=5 => 1,
                6..=8 => 2,
                _ => max_attempts,
            };
            for attempt in 1..=kills {
                let fault = match rng.gen_range(0..4) {
                    0 => Fault::Kill(KillPoint::Before),
                    1 => Fault::Kill(KillPoint::After),
                    2 => Fault::Panic,
                    // overruns the timeout; the late result must be discarded
                    _ => Fault::Delay(Duration::from_millis(250)),
                };
                plan = plan.with(seq, attempt, fault);
            }
            expected_kills.push(kills);
            report.kills += kills as usize;
        }
        let broker = Broker::builder(config, reg.clone()).fault_plan(plan).start().unwrap();
        let inputs: Vec<f64> = (0..jobs_per).map(|_| rng.gen_range(0..1000) as f64).collect();
        let ids: Vec<String> = inputs.iter().map(|&x| broker.submit(request(x)).unwrap().job_id).collect();
        if !broker.wait_idle(Duration::from_secs(30)) {
            report.lost_or_wrong += jobs_per;
        }
        // a stalled worker may still be running its discarded attempt
        std::thread::sleep(Duration::from_millis(120));
        if broker.check().is_err() {
            report.invariant_violations += 1;
        }
        let records = reg.audit_records();
        for ((id, kills), x) in ids.iter().zip(&expected_kills).zip(&inputs) {
            let job = broker.status(id).unwrap();
            if job.status == JobStatus::Done && job.result.is_some() {
                report.delivered += 1;
            }
            let oks = records
                .iter()
                .filter(|r| r.run.job_id.as_deref() == Some(id.as_str()) && r.run.outcome == RunOutcome::Ok)
                .count();
            if *kills < max_attempts {
                if job.status != JobStatus::Done || job.attempts != kills + 1 {
                    report.lost_or_wrong += 1;
                }
                if oks != 1 {
                    report.audit_mismatches += 1;
                }
                let mut fresh = (*pristine).clone();
                let oracle = apply_submission(&def, &mut fresh, &request(*x).inputs, Some("add")).unwrap();
                if job.result.as_ref() != Some(&oracle) {
                    report.result_mismatches += 1;
                }
            } else {
                let failed = job.status == JobStatus::Failed && job.result.is_none();
                let code = job.failure.as_ref().map(|f| f.code);
                if !failed || !matches!(code, Some(FailureCode::WorkerLost | FailureCode::Timeout)) {
                    report.lost_or_wrong += 1;
                }
                if oks != 0 {
                    report.audit_mismatches += 1;
                }
            }
        }
        report.schedules += 1;
        report.jobs += jobs_per;
    }
    report
}

#[derive(Debug, Default)]
pub struct IsolationReport {
    pub jobs: usize,
    pub delivered: usize,
    pub mismatches: usize,
    pub not_done: usize,
}

/// Submits `jobs` Add presses with distinct inputs through a pool that
/// keeps each instance for `max_uses` runs, and compares every result with
/// a run on a fresh instance.
pub fn stateful_isolation(reg: &Arc<Registry>, jobs: usize, pool_size: usize, max_uses: u32, seed: u64) -> IsolationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (def, pristine) = (reg.app(APP, 1).unwrap(), reg.workbook("tally-book", 1).unwrap());
    let broker = Broker::builder(config(pool_size, max_uses), reg.clone()).start().unwrap();
    let inputs: Vec<f64> = (0..jobs).map(|_| rng.gen_range(1..10_000) as f64).collect();
    let ids: Vec<String> = inputs.iter().map(|&x| broker.submit(request(x)).unwrap().job_id).collect();
    let mut report = IsolationReport {
        jobs,
        ..Default::default()
    };
    for (id, x) in ids.iter().zip(&inputs) {
        let job = broker.wait(id, Duration::from_secs(30)).unwrap();
        if job.status != JobStatus::Done {
            report.not_done += 1;
            continue;
        }
        report.delivered += 1;
        let mut fresh = (*pristine).clone();
        let oracle = apply_submission(&def, &mut fresh, &request(*x).inputs, Some("add")).unwrap();
        if job.result.as_ref() != Some(&oracle) || total(&job) != Some(*x) {
            report.mismatches += 1;
        }
    }
    report
}
