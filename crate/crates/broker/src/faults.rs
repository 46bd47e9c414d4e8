//! Scripted worker failures for tests.
//!
//! A plan is a text script with one event per line; `#` starts a comment.
//!
//! ```text
//! kill job=3 attempt=1 point=before   # die after loading, before running
//! kill job=3 attempt=2 point=after    # die after running, before reporting
//! panic job=4 attempt=1               # the run itself panics
//! delay job=5 attempt=1 ms=250        # stall before running
//! ```
//!
//! `job` is the submission sequence number (1 for the first job the broker
//! accepts). A killed worker reports the loss and its thread exits, which
//! is how a dead worker looks to the scheduler.

use std::collections::HashMap;
use std::time::Duration;

use crate::BrokerError;

pub const PLAN_ENV: &str = "BROKER_FAULT_PLAN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillPoint {
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Kill(KillPoint),
    Panic,
    Delay(Duration),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    events: HashMap<(u64, u32), Vec<Fault>>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, job: u64, attempt: u32, fault: Fault) -> Self {
        self.events.entry((job, attempt)).or_default().push(fault);
        self
    }

    pub fn len(&self) -> usize {
        self.events.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, BrokerError> {
        let mut plan = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| BrokerError::FaultPlan(format!("line {}: {reason}", n + 1));
            let mut words = line.split_whitespace();
            let verb = words.next().expect("line is not empty");
            let mut args = HashMap::new();
            for word in words {
                let (k, v) = word.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{word}`")))?;
                args.insert(k, v);
            }
            let number = |key: &str| -> Result<u64, BrokerError> {
                args.get(key)
                    .ok_or_else(|| bad(format!("missing `{key}`")))?
                    .parse()
                    .map_err(|_| bad(format!("`{key}` must be a non-negative integer")))
            };
            let job = number("job")?;
            let attempt = number("attempt")? as u32;
            let (fault, allowed): (Fault, &[&str]) = match verb {
                "kill" => {
                    let point = match args.get("point").copied().unwrap_or("before") {
                        "before" => KillPoint::Before,
                        "after" => KillPoint::After,
                        other => return Err(bad(format!("unknown kill point `{other}`"))),
                    };
                    (Fault::Kill(point), &["job", "attempt", "point"])
                }
                "panic" => (Fault::Panic, &["job", "attempt"]),
                "delay" => (Fault::Delay(Duration::from_millis(number("ms")?)), &["job", "attempt", "ms"]),
                other => return Err(bad(format!("unknown event `{other}`"))),
            };
            if let Some(extra) = args.keys().find(|k| !allowed.contains(k)) {
                return Err(bad(format!("unexpected `{extra}`")));
            }
            plan = plan.with(job, attempt, fault);
        }
        Ok(plan)
    }

    /// Reads the plan file named by `BROKER_FAULT_PLAN`, if set.
    pub fn from_env() -> Result<Option<Self>, BrokerError> {
        let Some(path) = std::env::var_os(PLAN_ENV) else { return Ok(None) };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| BrokerError::FaultPlan(format!("{}: {e}", path.to_string_lossy())))?;
        Self::parse(&text).map(Some)
    }

    pub(crate) fn events(&self, job: u64, attempt: u32) -> &[Fault] {
        self.events.get(&(job, attempt)).map_or(&[], Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_script() {
        let plan = FaultPlan::parse(
            "# header\nkill job=3 attempt=1\nkill job=3 attempt=2 point=after\n\npanic job=4 attempt=1\ndelay job=5 attempt=1 ms=250 # slow\n",
        )
        .unwrap();
        assert_eq!(plan.len(), 4);
        assert_eq!(plan.events(3, 1), [Fault::Kill(KillPoint::Before)]);
        assert_eq!(plan.events(3, 2), [Fault::Kill(KillPoint::After)]);
        assert_eq!(plan.events(5, 1), [Fault::Delay(Duration::from_millis(250))]);
        assert!(plan.events(9, 1).is_empty());
    }

    #[test]
    fn rejects_bad_lines() {
        for text in ["explode job=1 attempt=1", "kill job=1", "kill job=x attempt=1", "kill job=1 attempt=1 point=mid", "delay job=1 attempt=1", "panic job=1 attempt=1 ms=3", "kill job=1 attempt"] {
            assert!(FaultPlan::parse(text).is_err(), "{text}");
        }
    }
}
