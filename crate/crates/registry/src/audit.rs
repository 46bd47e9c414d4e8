//! Append-only, hash-chained run log.
//!
//! One JSON record per line. Each record carries the hash of the record
//! before it and its own hash over every other field, so editing, removing
//! or reordering lines breaks the chain.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sheetbridge_core::appdef::{Inputs, RunOutcome};
use sheetbridge_core::digest::{canonical_json, sha256_hex};
use thiserror::Error;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("audit record {seq} is malformed: {reason}")]
    Malformed { seq: u64, reason: String },
    #[error("audit chain broken at record {seq}: {reason}")]
    Chain { seq: u64, reason: String },
}

/// Everything a caller supplies for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewAuditRecord {
    pub user_id: String,
    pub app_id: String,
    pub app_revision: u32,
    pub workbook_id: String,
    pub workbook_revision: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    /// 1-based; retried attempts of one job share its id.
    pub attempt: u32,
    /// Raw submitted values, kept so the run can be replayed.
    pub inputs: Inputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressed: Option<String>,
    pub input_digest: String,
    /// Absent when the run produced no result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_digest: Option<String>,
    pub outcome: RunOutcome,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub run: NewAuditRecord,
    pub prev_hash: String,
    pub hash: String,
}

impl AuditRecord {
    fn compute_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("record serializes");
        value.as_object_mut().expect("record is an object").remove("hash");
        sha256_hex(canonical_json(&value).as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    #[serde(default)]
    pub user: Option<String>,
    #[serde(default)]
    pub app: Option<String>,
    /// Inclusive.
    #[serde(default)]
    pub from: Option<DateTime<Utc>>,
    /// Exclusive.
    #[serde(default)]
    pub to: Option<DateTime<Utc>>,
}

impl AuditFilter {
    pub fn matches(&self, r: &AuditRecord) -> bool {
        self.user.as_ref().is_none_or(|u| *u == r.run.user_id)
            && self.app.as_ref().is_none_or(|a| *a == r.run.app_id)
            && self.from.is_none_or(|t| r.at >= t)
            && self.to.is_none_or(|t| r.at < t)
    }
}

pub struct AuditLog {
    path: PathBuf,
    file: File,
    records: Vec<AuditRecord>,
}

impl AuditLog {
    /// Opens or creates the log and verifies the whole chain. A torn final
    /// line (a crash during append) is cut off; any other damage is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let (records, valid_len) = match File::open(&path) {
            Ok(file) => read_chain(file)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (Vec::new(), 0),
            Err(e) => return Err(e.into()),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            file.sync_data()?;
        }
        Ok(Self { path, file, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends and syncs to disk before returning.
    pub fn append(&mut self, run: NewAuditRecord) -> Result<AuditRecord, AuditError> {
        let (seq, prev_hash) = match self.records.last() {
            Some(last) => (last.seq + 1, last.hash.clone()),
            None => (1, GENESIS_HASH.to_string()),
        };
        let mut at = Utc::now();
        if let Some(last) = self.records.last() {
            at = at.max(last.at);
        }
        let mut record = AuditRecord {
            seq,
            at,
            run,
            prev_hash,
            hash: String::new(),
        };
        record.hash = record.compute_hash();
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditRecord> {
        self.records.iter().filter(|r| filter.matches(r)).cloned().collect()
    }
}

/// Re-reads a log from disk and checks every link. Returns the record count.
pub fn verify_file(path: impl AsRef<Path>) -> Result<usize, AuditError> {
    let (records, _) = read_chain(File::open(path)?)?;
    Ok(records.len())
}

fn read_chain(file: File) -> Result<(Vec<AuditRecord>, u64), AuditError> {
    let mut reader = BufReader::new(file);
    let mut records: Vec<AuditRecord> = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let seq = records.last().map_or(1, |r| r.seq + 1);
        if !line.ends_with('\n') {
            // torn tail from an interrupted append
            break;
        }
        let record: AuditRecord = serde_json::from_str(line.trim_end()).map_err(|e| AuditError::Malformed {
            seq,
            reason: e.to_string(),
        })?;
        let expected_prev = records.last().map_or(GENESIS_HASH, |r| r.hash.as_str());
        if record.seq != seq {
            return Err(AuditError::Chain {
                seq,
                reason: format!("found sequence number {}", record.seq),
            });
        }
        if record.prev_hash != expected_prev {
            return Err(AuditError::Chain {
                seq,
                reason: "previous-hash link does not match".into(),
            });
        }
        if record.compute_hash() != record.hash {
            return Err(AuditError::Chain {
                seq,
                reason: "record hash does not match its contents".into(),
            });
        }
        valid_len += n as u64;
        records.push(record);
    }
    Ok((records, valid_len))
}
