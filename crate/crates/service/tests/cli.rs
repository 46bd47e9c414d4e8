mod common;

use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::*;
use serde_json::Value;
use sheetbridge::api::RunRequest;
use sheetbridge::client::Client;
use sheetbridge::Config;
use sheetbridge_broker::faults::PLAN_ENV;
use sheetbridge_broker::{FailureCode, JobStatus};

const BIN: &str = env!("CARGO_BIN_EXE_sheetbridge");

fn sheetbridge(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SHEETBRIDGE_CONFIG")
        .env_remove("SHEETBRIDGE_TOKEN")
        .env_remove(PLAN_ENV)
        .output()
        .unwrap()
}

async fn sheetbridge_async(args: Vec<String>) -> Output {
    tokio::task::spawn_blocking(move || sheetbridge(&args.iter().map(String::as_str).collect::<Vec<_>>()))
        .await
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_line(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1), "{}", stdout(out));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

fn path(name: &str) -> String {
    format!("{FIXTURES}{name}")
}

#[test]
fn local_run_prints_labelled_outputs() {
    let out = sheetbridge(&[
        "run",
        &path("balance_sheet.app.json"),
        &path("balance_sheet_blank_inputs.json"),
        "--workbook",
        &path("balance_sheet.wb"),
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("outcome OK\n"), "{text}");
    assert!(text.contains("Total Current Assets (Year One)\t0.0\n"), "{text}");
    assert!(text.contains("action ok\n"), "{text}");

    let out = sheetbridge(&[
        "run",
        &path("balance_sheet.app.json"),
        &path("balance_sheet_blank_inputs.json"),
        "--workbook",
        &path("balance_sheet.wb"),
        "--json",
    ]);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["outcome"], "OK");
    assert_eq!(json["outputs"]["totalassets_y1"]["text"], "0.0");
}

#[test]
fn local_run_reports_business_outcomes_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in.json");
    std::fs::write(&inputs, r#"{"inputs": {"operatingcash_y1": "lots"}, "pressed": "submit"}"#).unwrap();
    let out = sheetbridge(&[
        "run",
        &path("balance_sheet.app.json"),
        inputs.to_str().unwrap(),
        "--workbook",
        &path("balance_sheet.wb"),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("outcome VALIDATION_FAILED\n"), "{}", stdout(&out));
    assert!(stdout(&out).contains("invalid operatingcash_y1"), "{}", stdout(&out));

    std::fs::write(&inputs, r#"{"inputs": [], "pressed": "submit"}"#).unwrap();
    let err = sheetbridge(&[
        "run",
        &path("balance_sheet.app.json"),
        inputs.to_str().unwrap(),
        "--workbook",
        &path("balance_sheet.wb"),
    ]);
    assert_eq!(error_line(&err)["error"]["code"], "VALIDATION");
}

#[test]
fn validate_checks_files() {
    let out = sheetbridge(&["validate", &path("balance_sheet.wb")]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).starts_with("ok workbook"), "{}", stdout(&out));
    let out = sheetbridge(&["validate", &path("balance_sheet.app.json"), "--workbook", &path("balance_sheet.wb")]);
    assert!(out.status.success(), "{out:?}");

    let dir = tempfile::tempdir().unwrap();
    let app = dir.path().join("app.json");
    let doc = std::fs::read_to_string(path("balance_sheet.app.json"))
        .unwrap()
        .replace("\"TotalAssets_Y1\"", "\"NoSuchName\"");
    std::fs::write(&app, doc).unwrap();
    let err = sheetbridge(&["validate", app.to_str().unwrap(), "--workbook", &path("balance_sheet.wb")]);
    let line = error_line(&err);
    assert_eq!(line["error"]["code"], "VALIDATION");
    assert!(line["error"]["details"].to_string().contains("NoSuchName"), "{line}");

    let wb = dir.path().join("bad.wb");
    std::fs::write(&wb, "workbook bad\nsheet S\ncell A1 := SUM(\n").unwrap();
    assert_eq!(error_line(&sheetbridge(&["validate", wb.to_str().unwrap()]))["error"]["code"], "VALIDATION");
    assert_eq!(error_line(&sheetbridge(&["validate", "/no/such/file"]))["error"]["code"], "NOT_FOUND");
}

#[test]
fn serve_needs_a_config() {
    let line = error_line(&sheetbridge(&["serve"]));
    assert!(line["error"]["message"].as_str().unwrap().contains("--config"), "{line}");
}

#[tokio::test(flavor = "multi_thread")]
async fn remote_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(&config(dir.path())).await;
    let origin = server.origin();
    let remote = |token: &str| vec!["--server".to_string(), origin.clone(), "--token".to_string(), token.to_string()];
    let args = |parts: &[&str], token: &str| parts.iter().map(|s| s.to_string()).chain(remote(token)).collect::<Vec<_>>();

    let out = sheetbridge_async(args(&["upload", &path("balance_sheet.wb"), "--id", "balance-sheet-model"], AUTHOR)).await;
    assert!(out.status.success(), "{out:?}");
    let version: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((version["asset_id"].as_str(), version["revision"].as_u64()), (Some("balance-sheet-model"), Some(1)));
    let out = sheetbridge_async(args(&["upload", &path("balance_sheet.app.json")], AUTHOR)).await;
    assert!(out.status.success(), "{out:?}");

    let denied = sheetbridge_async(args(&["publish", "balance-sheet", "1"], ALICE)).await;
    assert_eq!(error_line(&denied)["error"]["code"], "FORBIDDEN");
    let out = sheetbridge_async(args(&["publish", "balance-sheet", "1", "--note", "first"], ADMIN)).await;
    assert!(out.status.success(), "{out:?}");
    let again = sheetbridge_async(args(&["publish", "balance-sheet", "1"], ADMIN)).await;
    assert_eq!(error_line(&again)["error"]["code"], "CONFLICT");
    let missing = sheetbridge_async(args(&["rollback", "ghost", "1"], ADMIN)).await;
    assert_eq!(error_line(&missing)["error"]["code"], "NOT_FOUND");

    let run: RunRequest = serde_json::from_str(&fixture("balance_sheet_blank_inputs.json")).unwrap();
    let alice = server.client(ALICE);
    let job = alice.submit("balance-sheet", &run).await.unwrap().job_id;
    alice.wait(&job, Duration::from_secs(20)).await.unwrap();

    let out = sheetbridge_async(args(&["audit", "--user", "alice"], ADMIN)).await;
    assert!(out.status.success(), "{out:?}");
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["job_id"], job.as_str());
    let out = sheetbridge_async(args(&["audit", "--user", "bob"], ADMIN)).await;
    assert!(out.status.success() && out.stdout.is_empty(), "{out:?}");
    assert_eq!(error_line(&sheetbridge_async(args(&["audit"], "wrong")).await)["error"]["code"], "UNAUTHORIZED");
    server.stop().await;

    let gone = sheetbridge_async(args(&["publish", "balance-sheet", "1"], ADMIN)).await;
    assert!(error_line(&gone)["error"]["message"].as_str().unwrap().starts_with("request failed"));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Daemon(Child);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_server(config_file: &Path, plan: Option<&Path>) -> Daemon {
    let mut cmd = Command::new(BIN);
    cmd.args(["serve", "--config", config_file.to_str().unwrap()])
        .env_remove(PLAN_ENV)
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    if let Some(plan) = plan {
        cmd.env(PLAN_ENV, plan);
    }
    Daemon(cmd.spawn().unwrap())
}

async fn until_healthy(origin: &str) {
    let client = Client::new(origin, None);
    let deadline = Instant::now() + Duration::from_secs(20);
    while client.get_raw("/health").await.is_err() {
        assert!(Instant::now() < deadline, "server did not come up");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn killed_server_marks_unfinished_runs_interrupted() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Config = config(dir.path());
    config.listen = format!("127.0.0.1:{}", free_port()).parse().unwrap();
    config.broker.pool_size = 1;
    let config_file = dir.path().join("sheetbridge.toml");
    std::fs::write(&config_file, toml::to_string(&config).unwrap()).unwrap();
    let plan = dir.path().join("plan.txt");
    std::fs::write(&plan, "delay job=2 attempt=1 ms=30000\n").unwrap();
    let origin = format!("http://{}", config.listen);
    let run: RunRequest = serde_json::from_str(&fixture("balance_sheet_blank_inputs.json")).unwrap();

    let daemon = spawn_server(&config_file, Some(&plan));
    until_healthy(&origin).await;
    let author = Client::new(&origin, Some(AUTHOR.into()));
    author.upload_workbook("balance-sheet-model", &fixture("balance_sheet.wb")).await.unwrap();
    author
        .upload_appdef(&serde_json::from_str(&fixture("balance_sheet.app.json")).unwrap())
        .await
        .unwrap();
    Client::new(&origin, Some(ADMIN.into())).publish("balance-sheet", 1, "").await.unwrap();
    let alice = Client::new(&origin, Some(ALICE.into()));
    let done = alice.submit("balance-sheet", &run).await.unwrap().job_id;
    let done_job = alice.wait(&done, Duration::from_secs(20)).await.unwrap();
    assert_eq!(done_job.status, JobStatus::Done);
    let running = alice.submit("balance-sheet", &run).await.unwrap().job_id;
    let queued = alice.submit("balance-sheet", &run).await.unwrap().job_id;
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert_eq!(alice.run(&running).await.unwrap().status, JobStatus::Running);
    drop(daemon);

    let _daemon = spawn_server(&config_file, None);
    until_healthy(&origin).await;
    assert_eq!(alice.run(&done).await.unwrap(), done_job);
    for id in [&running, &queued] {
        let job = alice.run(id).await.unwrap();
        assert_eq!(job.status, JobStatus::Failed, "{id}");
        assert_eq!(job.failure.unwrap().code, FailureCode::Interrupted);
    }
}
