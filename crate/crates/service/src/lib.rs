//! HTTP API and operator CLI for sheetbridge.
//!
//! [`Service`] wires the registry and the broker together from a
//! [`Config`]; [`api::router`] exposes them under `/api/v1`.

pub mod api;
pub mod cli;
pub mod client;
pub mod config;
pub mod error;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use chrono::Utc;
use sheetbridge_broker::{Broker, BrokerError};
use sheetbridge_registry::{Registry, RegistryError, User};
use thiserror::Error;

pub use config::{Config, ConfigError};
pub use error::{ApiError, ErrorCode};

use api::{AppState, Session};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Registry, broker and sessions of one running service.
pub struct Service {
    state: Arc<AppState>,
}

impl Service {
    /// Opens the store and the job journal under `config.data_dir` and
    /// starts the worker pool.
    pub fn open(config: &Config) -> Result<Self, ServiceError> {
        config.validate()?;
        std::fs::create_dir_all(&config.data_dir)?;
        let registry = Arc::new(Registry::open_with_cap(config.store_dir(), config.cell_cap)?);
        let mut sessions = HashMap::new();
        let now = Utc::now();
        for u in &config.users {
            let mut user = User::new(&u.user_id, u.role);
            user.display_name = u.display_name.clone();
            user.app_grants = u.grants.clone();
            registry.set_user(user);
            sessions.insert(
                u.token.clone(),
                Session {
                    token: u.token.clone(),
                    user_id: u.user_id.clone(),
                    issued_at: now,
                },
            );
        }
        let broker = Broker::builder(config.broker.clone(), registry.clone())
            .journal(config.journal_path())
            .start()?;
        Ok(Self {
            state: Arc::new(AppState {
                registry,
                broker: Arc::new(broker),
                sessions,
            }),
        })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.state.registry
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.state.broker
    }

    pub fn router(&self) -> axum::Router {
        api::router(self.state.clone())
    }

    /// Serves until `shutdown` resolves, then drains the broker: queued
    /// jobs fail with INTERRUPTED and running ones finish.
    pub async fn serve(
        self,
        listener: tokio::net::TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), ServiceError> {
        let router = self.router();
        axum::serve(listener, router).with_graceful_shutdown(shutdown).await?;
        let broker = self.state.broker.clone();
        tokio::task::spawn_blocking(move || broker.shutdown())
            .await
            .map_err(std::io::Error::other)?;
        Ok(())
    }
}

/// Binds `config.listen` and serves until Ctrl-C.
pub async fn run_server(config: Config) -> Result<(), ServiceError> {
    let service = Service::open(&config)?;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!("listening on http://{addr}/api/v1");
    service
        .serve(listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
