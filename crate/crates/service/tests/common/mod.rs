//! A server on an ephemeral port with a fixed user table.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use serde_json::{json, Value};
use sheetbridge::client::Client;
use sheetbridge::config::UserEntry;
use sheetbridge::{Config, Service};
use sheetbridge_core::appdef::Role;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/");

pub const ADMIN: &str = "admin-token";
pub const AUTHOR: &str = "author-token";
pub const ALICE: &str = "alice-token";
pub const BOB: &str = "bob-token";

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{FIXTURES}{name}")).unwrap()
}

pub fn config(data_dir: &Path) -> Config {
    let user = |id: &str, role, token: &str, grants: &[&str]| UserEntry {
        user_id: id.into(),
        display_name: String::new(),
        role,
        token: token.into(),
        grants: grants.iter().map(|g| g.to_string()).collect(),
    };
    let mut config = Config::new(data_dir);
    config.listen = "127.0.0.1:0".parse().unwrap();
    config.broker.pool_size = 2;
    config.broker.scheduler_period_ms = 10;
    config.users = vec![
        user("admin", Role::Admin, ADMIN, &[]),
        user("author", Role::Author, AUTHOR, &[]),
        user("alice", Role::EndUser, ALICE, &["calc"]),
        user("bob", Role::EndUser, BOB, &[]),
    ];
    config
}

pub struct TestServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl TestServer {
    pub async fn start(config: &Config) -> Self {
        let config = config.clone();
        let service = tokio::task::spawn_blocking(move || Service::open(&config).unwrap()).await.unwrap();
        Self::serve(service).await
    }

    pub async fn serve(service: Service) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = oneshot::channel();
        let task = tokio::spawn(async move {
            service
                .serve(listener, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
        });
        Self {
            addr,
            stop: Some(stop),
            task: Some(task),
        }
    }

    pub fn origin(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn client(&self, token: &str) -> Client {
        Client::new(&self.origin(), Some(token.to_string()))
    }

    /// Stops accepting requests and drains the broker.
    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap();
    }
}

/// A small app with no ACL of its own: only grants and privileged roles
/// may run it.
pub const CALC_WORKBOOK: &str = "workbook calc\nsheet S\ncell A1 = 0\ncell A2 := A1*2\ncell B1 = 0\n\
name X = S!A1\nname Double = S!A2\nname Status = S!B1\n";

pub fn calc_app(wb_rev: u32, title: &str) -> Value {
    json!({
        "app_id": "calc",
        "title": title,
        "workbook_ref": {"id": "calc-book", "revision": wb_rev},
        "root": {"id": "tabs", "type": "tabbed_pane", "tabs": [{"id": "main", "label": "Main", "children": [
            {"id": "x", "type": "input_field", "label": "X", "binding": "X", "datatype": "NUMBER",
             "validators": [{"kind": "required"}]},
            {"id": "double", "type": "output_field", "label": "Double", "binding": "Double"}
        ]}]},
        "report": {"sections": [{"type": "paragraph", "text": "Double is {Double}"}]}
    })
}

/// Uploads and publishes the balance sheet and calc apps.
pub async fn seed(server: &TestServer) {
    let author = server.client(AUTHOR);
    let admin = server.client(ADMIN);
    author
        .upload_workbook("balance-sheet-model", &fixture("balance_sheet.wb"))
        .await
        .unwrap();
    let doc: Value = serde_json::from_str(&fixture("balance_sheet.app.json")).unwrap();
    let app = author.upload_appdef(&doc).await.unwrap();
    admin.publish("balance-sheet", app.revision, "initial").await.unwrap();
    author.upload_workbook("calc-book", CALC_WORKBOOK).await.unwrap();
    let calc = author.upload_appdef(&calc_app(1, "Calc")).await.unwrap();
    admin.publish("calc", calc.revision, "initial").await.unwrap();
}
