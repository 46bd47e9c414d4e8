use std::sync::Arc;

use sheetbridge_core::appdef::AppDefinition;
use sheetbridge_core::Workbook;
use sheetbridge_registry::{NewAuditRecord, Registry};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    /// The revisions cannot be loaded; retrying will not help.
    #[error("cannot load: {0}")]
    Load(String),
    #[error("cannot record audit: {0}")]
    Audit(String),
}

/// Where workers get pinned revisions and record finished runs.
pub trait Backend: Send + Sync + 'static {
    /// Definition and pristine, calculated workbook of one app revision.
    fn load(&self, app_id: &str, app_revision: u32) -> Result<(Arc<AppDefinition>, Arc<Workbook>), BackendError>;

    /// Makes the record durable before returning.
    fn record(&self, run: NewAuditRecord) -> Result<(), BackendError>;
}

impl Backend for Registry {
    fn load(&self, app_id: &str, app_revision: u32) -> Result<(Arc<AppDefinition>, Arc<Workbook>), BackendError> {
        let def = self.app(app_id, app_revision).map_err(|e| BackendError::Load(e.to_string()))?;
        let wb = self
            .workbook(&def.workbook_ref.id, def.workbook_ref.revision)
            .map_err(|e| BackendError::Load(e.to_string()))?;
        Ok((def, wb))
    }

    fn record(&self, run: NewAuditRecord) -> Result<(), BackendError> {
        self.record_audit(run).map(|_| ()).map_err(|e| BackendError::Audit(e.to_string()))
    }
}

impl<B: Backend> Backend for Arc<B> {
    fn load(&self, app_id: &str, app_revision: u32) -> Result<(Arc<AppDefinition>, Arc<Workbook>), BackendError> {
        (**self).load(app_id, app_revision)
    }

    fn record(&self, run: NewAuditRecord) -> Result<(), BackendError> {
        (**self).record(run)
    }
}
