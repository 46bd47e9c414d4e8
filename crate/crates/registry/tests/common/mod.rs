//! Small versioned fixtures and the publish/read stress harness.

#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use parking_lot::Mutex;
use sheetbridge_core::appdef::Role;
use sheetbridge_core::{CellValue, WorkbookRef};
use sheetbridge_registry::{AssetKind, Registry, User, VersionState};

pub const ADMIN: &str = "admin";
pub const AUTHOR: &str = "author";
pub const USERS: [&str; 3] = ["alice", "bob", "carol"];
pub const OUTSIDER: &str = "mallory";

/// Revision `rev` multiplies its input by `rev` and records `rev` in a
/// marker cell, so any mix of revisions is visible in the values.
pub fn workbook_doc(rev: u32) -> String {
    format!(
        "workbook versioned\nsheet S\ncell A1 = 1\ncell A2 := A1*{rev}\ncell B1 = {rev}\ncell C1 = 0\ncell C2 := C1+1\n\
         name Input = S!A1\nname Out = S!A2\nname Marker = S!B1\nname Runs = S!C1\nname Status = S!D1\n\
         action Count status=S!D1\n  copy S!C2 -> S!C1\n"
    )
}

pub fn app_doc(app_id: &str, workbook_id: &str, wb_rev: u32, title: &str) -> String {
    serde_json::json!({
        "app_id": app_id,
        "title": title,
        "workbook_ref": {"id": workbook_id, "revision": wb_rev},
        "root": {"id": "tabs", "type": "tabbed_pane", "tabs": [{"id": "main", "label": "Main", "children": [
            {"id": "x", "type": "input_field", "label": "X", "binding": "Input", "datatype": "NUMBER",
             "validators": [{"kind": "numeric_range", "min": 0}]},
            {"id": "count", "type": "button", "label": "Count", "action": "Count"},
            {"id": "y", "type": "output_field", "label": "Y", "binding": "Out"},
            {"id": "marker", "type": "output_field", "binding": "Marker"},
            {"id": "runs", "type": "output_field", "binding": "Runs"}
        ]}]},
        "report": {"sections": [{"type": "paragraph", "text": "Y is {Out}"}]}
    })
    .to_string()
}

pub fn registry(dir: &std::path::Path) -> Registry {
    let reg = Registry::open(dir).unwrap();
    add_users(&reg);
    reg
}

pub fn add_users(reg: &Registry) {
    reg.set_user(User::new(ADMIN, Role::Admin));
    reg.set_user(User::new(AUTHOR, Role::Author));
    for u in USERS {
        reg.set_user(User::new(u, Role::EndUser).with_grant("calc"));
    }
    reg.set_user(User::new(OUTSIDER, Role::EndUser));
}

/// Uploads workbook revision `rev` and an app revision pinning it.
/// Returns the app revision.
pub fn upload_pair(reg: &Registry, rev: u32) -> u32 {
    let wb = reg
        .upload(AUTHOR, AssetKind::Workbook, Some("model"), &workbook_doc(rev))
        .unwrap();
    let app = reg
        .upload(AUTHOR, AssetKind::Appdef, None, &app_doc("calc", "model", wb.revision, &format!("rev {rev}")))
        .unwrap();
    app.revision
}

#[derive(Debug, Default)]
pub struct GateReport {
    pub reads: usize,
    pub not_published: usize,
    pub mixed_pairs: usize,
    pub not_linearizable: usize,
    pub errors: usize,
}

/// One thread publishes and rolls back `cycles` times while `readers`
/// threads call `get_live` as end users. Every read is checked for state,
/// for app/workbook agreement, and against the window of revisions that
/// were live while the read was in flight.
pub fn version_gate_stress(reg: &Registry, cycles: u32, readers: usize) -> GateReport {
    // history[i] is the app revision made live by transition i
    let first = upload_pair(reg, 1);
    reg.approve_and_publish(ADMIN, "calc", first, "initial").unwrap();
    let history = Mutex::new(vec![first]);
    let started = AtomicUsize::new(0);
    let committed = AtomicUsize::new(0);
    let done = AtomicBool::new(false);
    let report = Mutex::new(GateReport::default());

    std::thread::scope(|s| {
        s.spawn(|| {
            let transition = |rev: u32, publish: bool| {
                history.lock().push(rev);
                started.fetch_add(1, Ordering::SeqCst);
                if publish {
                    reg.approve_and_publish(ADMIN, "calc", rev, "cycle").unwrap();
                } else {
                    reg.rollback(ADMIN, "calc", rev).unwrap();
                }
                committed.fetch_add(1, Ordering::SeqCst);
            };
            let mut newest = first;
            // keep a draft waiting ahead of the live revision at all times
            let mut pending = upload_pair(reg, 2);
            for cycle in 0..cycles {
                let previous = newest;
                newest = pending;
                pending = upload_pair(reg, cycle + 3);
                transition(newest, true);
                transition(previous, false);
                transition(newest, false);
            }
            done.store(true, Ordering::SeqCst);
        });
        for r in 0..readers {
            let reg = &reg;
            let history = &history;
            let started = &started;
            let committed = &committed;
            let done = &done;
            let report = &report;
            s.spawn(move || {
                let user = USERS[r % USERS.len()];
                let mut local = GateReport::default();
                while !done.load(Ordering::SeqCst) || local.reads == 0 {
                    let lo = committed.load(Ordering::SeqCst);
                    let live = match reg.get_live(user, "calc") {
                        Ok(live) => live,
                        Err(_) => {
                            local.errors += 1;
                            continue;
                        }
                    };
                    let hi = started.load(Ordering::SeqCst);
                    local.reads += 1;
                    if live.app_version.state != VersionState::Published
                        || live.workbook_version.state != VersionState::Published
                    {
                        local.not_published += 1;
                    }
                    let wb_rev = live.workbook_version.revision;
                    let marker = live.workbook.get_range("Marker").unwrap().values()[0].clone();
                    let pinned = WorkbookRef::new("model", wb_rev);
                    if live.definition.workbook_ref != pinned
                        || live.workbook.origin() != Some(&pinned)
                        || live.app_version.pins.as_ref() != Some(&pinned)
                        || marker != CellValue::Number(f64::from(wb_rev))
                        || live.definition.title != format!("rev {wb_rev}")
                    {
                        local.mixed_pairs += 1;
                    }
                    let window = history.lock()[lo..=hi].to_vec();
                    if !window.contains(&live.app_version.revision) {
                        local.not_linearizable += 1;
                    }
                }
                let mut total = report.lock();
                total.reads += local.reads;
                total.not_published += local.not_published;
                total.mixed_pairs += local.mixed_pairs;
                total.not_linearizable += local.not_linearizable;
                total.errors += local.errors;
            });
        }
    });
    report.into_inner()
}
