//! `sheetbridge` command line.
//!
//! Failures exit with status 1 and print one JSON line to stderr:
//! `{"error":{"code":"FORBIDDEN","message":"..."}}`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use axum::http::StatusCode;
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use sheetbridge_core::appdef::{apply_submission, validate_appdef, AppDefinition, ComponentKind, Output, RunResult};
use sheetbridge_core::workbook::DEFAULT_CELL_CAP;
use sheetbridge_core::Workbook;
use sheetbridge_registry::AuditFilter;

use crate::api::RunRequest;
use crate::client::Client;
use crate::config::Config;
use crate::error::{ApiError, ErrorBody, ErrorCode};

#[derive(Debug, Parser)]
#[command(name = "sheetbridge", version, about = "Serve governed spreadsheets as web apps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Remote {
    /// Server origin.
    #[arg(long, env = "SHEETBRIDGE_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Bearer token.
    #[arg(long, env = "SHEETBRIDGE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Configuration file; defaults to $SHEETBRIDGE_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a workbook file, or an app definition (against --workbook if given).
    Validate {
        file: PathBuf,
        #[arg(long)]
        workbook: Option<PathBuf>,
    },
    /// Upload a workbook (needs --id) or an app definition as a new draft.
    Upload {
        file: PathBuf,
        /// Workbook id; app definitions carry their own.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Approve a draft app revision and make it live.
    Publish {
        app_id: String,
        revision: u32,
        #[arg(long, default_value = "")]
        note: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Make an archived app revision live again.
    Rollback {
        app_id: String,
        revision: u32,
        #[command(flatten)]
        remote: Remote,
    },
    /// Run an app definition locally against a workbook file.
    Run {
        appdef: PathBuf,
        /// JSON file: `{"inputs": {...}, "pressed": "<button id>"}`.
        inputs: PathBuf,
        /// Workbook the definition pins.
        #[arg(long)]
        workbook: PathBuf,
        /// Print the result as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Print audit records as JSON lines.
    Audit {
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        app: Option<String>,
        /// RFC 3339 timestamp, inclusive.
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        /// RFC 3339 timestamp, exclusive.
        #[arg(long)]
        to: Option<DateTime<Utc>>,
        #[command(flatten)]
        remote: Remote,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::to_string(&ErrorBody { error: e }).expect("error serializes");
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn failure(code: ErrorCode, message: impl Into<String>) -> ApiError {
    let status = match code {
        ErrorCode::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError::new(status, code, message)
}

fn read(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path).map_err(|e| failure(ErrorCode::NotFound, format!("{}: {e}", path.display())))
}

fn runtime() -> Result<tokio::runtime::Runtime, ApiError> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| failure(ErrorCode::Internal, e.to_string()))
}

fn print_json(out: &mut impl Write, value: &impl serde::Serialize) -> Result<(), ApiError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    writeln!(out, "{text}").map_err(|e| failure(ErrorCode::Internal, e.to_string()))
}

fn is_json(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

fn load_workbook(path: &Path) -> Result<Workbook, ApiError> {
    Workbook::load_with_cap(&read(path)?, DEFAULT_CELL_CAP)
        .map_err(|e| failure(ErrorCode::Validation, format!("{}: {e}", path.display())))
}

fn load_appdef(path: &Path) -> Result<AppDefinition, ApiError> {
    AppDefinition::from_json(&read(path)?).map_err(|e| failure(ErrorCode::Validation, format!("{}: {e}", path.display())))
}

/// Loads the workbook as the revision `def` pins and checks the definition
/// against it.
fn bind(def: &AppDefinition, path: &Path) -> Result<Workbook, ApiError> {
    let mut wb = load_workbook(path)?;
    wb.set_origin(def.workbook_ref.clone());
    wb.recalc_full();
    let report = validate_appdef(def, &wb);
    if !report.is_ok() {
        let mut err = failure(ErrorCode::Validation, format!("{} does not fit {}", def.app_id, path.display()));
        err.details = report.errors.iter().map(|e| format!("{}: {:?}: {}", e.component_id, e.kind, e.reason)).collect();
        return Err(err);
    }
    Ok(wb)
}

pub fn execute(command: Command, out: &mut impl Write) -> Result<(), ApiError> {
    let io = |e: std::io::Error| failure(ErrorCode::Internal, e.to_string());
    match command {
        Command::Serve { config } => {
            let config = Config::load(config.as_deref()).map_err(|e| failure(ErrorCode::Validation, e.to_string()))?;
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(crate::run_server(config))
                .map_err(|e| failure(ErrorCode::Internal, e.to_string()))
        }
        Command::Validate { file, workbook } => {
            let text = read(&file)?;
            if !is_json(&text) {
                let wb = load_workbook(&file)?;
                writeln!(
                    out,
                    "ok workbook `{}`: {} sheets, {} populated cells, {} names, {} actions",
                    wb.title(),
                    wb.sheets().len(),
                    wb.populated_cells(),
                    wb.names().count(),
                    wb.actions().count()
                )
                .map_err(io)?;
                return Ok(());
            }
            let def = load_appdef(&file)?;
            match workbook {
                Some(path) => {
                    let report = match bind(&def, &path) {
                        Ok(_) => Vec::new(),
                        Err(e) => e.details.clone(),
                    };
                    for line in &report {
                        writeln!(out, "{line}").map_err(io)?;
                    }
                    if !report.is_empty() {
                        let mut err = failure(ErrorCode::Validation, format!("{} problems in {}", report.len(), def.app_id));
                        err.details = report;
                        return Err(err);
                    }
                    writeln!(out, "ok appdef `{}` against {}", def.app_id, def.workbook_ref).map_err(io)?;
                }
                None => writeln!(
                    out,
                    "ok appdef `{}` (document only; pass --workbook to check bindings)",
                    def.app_id
                )
                .map_err(io)?,
            }
            Ok(())
        }
        Command::Upload { file, id, remote } => {
            let text = read(&file)?;
            let client = Client::new(&remote.server, remote.token);
            let version = runtime()?.block_on(async {
                if is_json(&text) {
                    let doc: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| failure(ErrorCode::Validation, format!("{}: {e}", file.display())))?;
                    client.upload_appdef(&doc).await
                } else {
                    let id = id.ok_or_else(|| failure(ErrorCode::Validation, "uploading a workbook needs --id"))?;
                    client.upload_workbook(&id, &text).await
                }
            })?;
            print_json(out, &version)
        }
        Command::Publish {
            app_id,
            revision,
            note,
            remote,
        } => {
            let client = Client::new(&remote.server, remote.token);
            let version = runtime()?.block_on(client.publish(&app_id, revision, &note))?;
            print_json(out, &version)
        }
        Command::Rollback {
            app_id,
            revision,
            remote,
        } => {
            let client = Client::new(&remote.server, remote.token);
            let version = runtime()?.block_on(client.rollback(&app_id, revision))?;
            print_json(out, &version)
        }
        Command::Run {
            appdef,
            inputs,
            workbook,
            json,
        } => {
            let def = load_appdef(&appdef)?;
            let request: RunRequest = serde_json::from_str(&read(&inputs)?)
                .map_err(|e| failure(ErrorCode::Validation, format!("{}: {e}", inputs.display())))?;
            let mut wb = bind(&def, &workbook)?;
            let result = apply_submission(&def, &mut wb, &request.inputs, request.pressed.as_deref())
                .map_err(|e| failure(ErrorCode::Internal, e.to_string()))?;
            if json {
                print_json(out, &result)
            } else {
                out.write_all(render_result(&def, &result).as_bytes()).map_err(io)
            }
        }
        Command::Audit {
            user,
            app,
            from,
            to,
            remote,
        } => {
            let client = Client::new(&remote.server, remote.token);
            let records = runtime()?.block_on(client.audit(&AuditFilter { user, app, from, to }))?;
            for r in records {
                writeln!(out, "{}", serde_json::to_string(&r).expect("record serializes")).map_err(io)?;
            }
            Ok(())
        }
    }
}

/// Plain-text form of a run: outcome, action status, every output with
/// its label, and validation failures.
pub fn render_result(def: &AppDefinition, result: &RunResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "app {} ({}) on {}", def.app_id, def.title, def.workbook_ref);
    let _ = writeln!(s, "outcome {}", result.outcome.as_str());
    if let Some(message) = &result.message {
        let _ = writeln!(s, "message {message}");
    }
    if let Some(action) = &result.action {
        match action.ok {
            true => s.push_str("action ok\n"),
            false => {
                let _ = writeln!(s, "action failed: {}", action.message);
            }
        }
    }
    for c in def.components() {
        let Some(output) = result.outputs.get(&c.id) else { continue };
        let label = match &c.kind {
            ComponentKind::OutputField { label, .. } | ComponentKind::OutputTable { label, .. } if !label.is_empty() => {
                label.as_str()
            }
            _ => c.id.as_str(),
        };
        match output {
            Output::Field { text, .. } => {
                let _ = writeln!(s, "{label}\t{text}");
            }
            Output::Table { text, .. } => {
                let _ = writeln!(s, "{label}");
                for row in text {
                    let _ = writeln!(s, "\t{}", row.join("\t"));
                }
            }
        }
    }
    for f in &result.validation_failures {
        let _ = writeln!(s, "invalid {} [{}]: {}", f.component_id, f.rule, f.message);
    }
    s
}
