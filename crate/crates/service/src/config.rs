use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sheetbridge_broker::BrokerConfig;
use sheetbridge_core::appdef::Role;
use sheetbridge_core::workbook::DEFAULT_CELL_CAP;
use thiserror::Error;

pub const CONFIG_ENV: &str = "SHEETBRIDGE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("no configuration file: pass --config or set {CONFIG_ENV}")]
    Missing,
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Service configuration, read from a TOML file.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// data_dir = "/var/lib/sheetbridge"
///
/// [broker]
/// pool_size = 4
///
/// [[users]]
/// user_id = "ops"
/// role = "ADMIN"
/// token = "change-me"
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Holds the asset store (`store/`) and the job journal (`jobs.jsonl`).
    pub data_dir: PathBuf,
    #[serde(default = "default_cap")]
    pub cell_cap: usize,
    #[serde(default)]
    pub broker: BrokerConfig,
    #[serde(default)]
    pub users: Vec<UserEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub user_id: String,
    #[serde(default)]
    pub display_name: String,
    pub role: Role,
    /// Bearer token that authenticates this user.
    pub token: String,
    /// Apps this user may run beyond what their role allows.
    #[serde(default)]
    pub grants: BTreeSet<String>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_cap() -> usize {
    DEFAULT_CELL_CAP
}

impl Config {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            data_dir: data_dir.into(),
            cell_cap: DEFAULT_CELL_CAP,
            broker: BrokerConfig::default(),
            users: Vec::new(),
        }
    }

    /// Reads `path`, or the file named by `SHEETBRIDGE_CONFIG` when `path`
    /// is `None`. A relative `data_dir` is taken relative to the file.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from).ok_or(ConfigError::Missing)?,
        };
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: shown, source })?;
        if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.broker
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut ids = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for u in &self.users {
            if u.token.is_empty() {
                return Err(ConfigError::Invalid(format!("user `{}` has an empty token", u.user_id)));
            }
            if !ids.insert(&u.user_id) {
                return Err(ConfigError::Invalid(format!("user `{}` is listed twice", u.user_id)));
            }
            if !tokens.insert(&u.token) {
                return Err(ConfigError::Invalid(format!("user `{}` reuses another user's token", u.user_id)));
            }
        }
        Ok(())
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data_dir.join("store")
    }

    pub fn journal_path(&self) -> PathBuf {
        self.data_dir.join("jobs.jsonl")
    }
}
