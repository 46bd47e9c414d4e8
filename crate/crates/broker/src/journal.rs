use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::{BrokerError, Failure, FailureCode, Job, JobStatus};

/// Append-only JSONL file of job snapshots. The last line for a job wins.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens or creates the journal and returns the jobs it holds. Jobs that
    /// were not finished when the previous broker stopped come back FAILED
    /// with code INTERRUPTED, and that is written to the journal.
    pub fn open(path: impl AsRef<Path>, now: DateTime<Utc>) -> Result<(Self, Vec<Job>), BrokerError> {
        let path = path.as_ref().to_path_buf();
        let err = |e: std::io::Error| BrokerError::Journal(format!("{}: {e}", path.display()));
        let mut latest: HashMap<String, Job> = HashMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(err)?);
            for (n, line) in reader.split(b'\n').enumerate() {
                let line = line.map_err(err)?;
                match serde_json::from_slice::<Job>(&line) {
                    Ok(job) => {
                        valid_len += line.len() as u64 + 1;
                        latest.insert(job.job_id.clone(), job);
                    }
                    // a torn last line from a crash mid-append
                    Err(_) if line.is_empty() || !line.ends_with(b"}") => break,
                    Err(e) => return Err(BrokerError::Journal(format!("{} line {}: {e}", path.display(), n + 1))),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        file.set_len(valid_len).map_err(err)?;
        let mut journal = Self { path, file };

        let mut jobs: Vec<Job> = latest.into_values().collect();
        jobs.sort_by_key(|j| j.seq);
        for job in jobs.iter_mut().filter(|j| !j.status.is_terminal()) {
            job.status = JobStatus::Failed;
            job.failure = Some(Failure {
                code: FailureCode::Interrupted,
                message: "the broker stopped before the job finished".into(),
            });
            job.finished_at = Some(now);
            journal.append(job)?;
        }
        Ok((journal, jobs))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one snapshot; it is on disk when this returns.
    pub fn append(&mut self, job: &Job) -> Result<(), BrokerError> {
        let mut line = serde_json::to_vec(job).expect("job serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| BrokerError::Journal(format!("{}: {e}", self.path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::JobRequest;
    use sheetbridge_core::WorkbookRef;

    fn job(id: &str, seq: u64, status: JobStatus) -> Job {
        Job {
            job_id: id.into(),
            seq,
            request: JobRequest {
                user_id: "u".into(),
                app_id: "a".into(),
                app_revision: 1,
                workbook_ref: WorkbookRef::new("w", 1),
                inputs: Default::default(),
                pressed: None,
            },
            status,
            attempts: 0,
            enqueued_at: Utc::now(),
            started_at: None,
            finished_at: None,
            result: None,
            failure: None,
        }
    }

    #[test]
    fn reopen_interrupts_unfinished_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.jsonl");
        {
            let (mut j, jobs) = Journal::open(&path, Utc::now()).unwrap();
            assert!(jobs.is_empty());
            j.append(&job("a", 1, JobStatus::Queued)).unwrap();
            j.append(&job("b", 2, JobStatus::Queued)).unwrap();
            let mut done = job("a", 1, JobStatus::Failed);
            done.failure = Some(Failure {
                code: FailureCode::Cancelled,
                message: "x".into(),
            });
            j.append(&done).unwrap();
        }
        // torn tail
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"job_id\":\"c\",").unwrap();
        drop(f);

        let (_, jobs) = Journal::open(&path, Utc::now()).unwrap();
        assert_eq!(jobs.len(), 2);
        assert_eq!(jobs[0].failure.as_ref().unwrap().code, FailureCode::Cancelled);
        assert_eq!(jobs[1].failure.as_ref().unwrap().code, FailureCode::Interrupted);

        let (_, again) = Journal::open(&path, Utc::now()).unwrap();
        assert_eq!(again.iter().map(|j| j.status).collect::<Vec<_>>(), [JobStatus::Failed; 2]);
    }
}
