//! Versioned storage for workbooks and app definitions.
//!
//! Every upload becomes an immutable DRAFT revision. An admin publishes a
//! draft (archiving whatever was live) or rolls back to an archived
//! revision. Publishing an app definition also makes the workbook revision
//! it pins live, so the live app and its workbook always move together.
//! Runs are recorded in a hash-chained audit log.

mod audit;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sheetbridge_core::appdef::{
    apply_submission, choice_options, validate_appdef, AppDefinition, Role, RunResult, SubmitError,
};
use sheetbridge_core::digest::sha256_hex;
use sheetbridge_core::workbook::DEFAULT_CELL_CAP;
use sheetbridge_core::{CellValue, Workbook, WorkbookRef};
use thiserror::Error;

pub use audit::{verify_file, AuditError, AuditFilter, AuditLog, AuditRecord, NewAuditRecord, GENESIS_HASH};
pub use store::is_valid_asset_id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssetKind {
    Workbook,
    Appdef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VersionState {
    Draft,
    Published,
    Archived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRecord {
    pub approver: String,
    pub at: DateTime<Utc>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredVersion {
    pub asset_id: String,
    pub kind: AssetKind,
    pub revision: u32,
    /// SHA-256 of the uploaded bytes.
    pub content_hash: String,
    pub state: VersionState,
    pub uploaded_by: String,
    pub uploaded_at: DateTime<Utc>,
    /// The most recent publish or rollback of this revision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approval: Option<ApprovalRecord>,
    /// Workbook revision an app definition is bound to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pins: Option<WorkbookRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    #[serde(default)]
    pub display_name: String,
    pub role: Role,
    /// Apps an END_USER may run beyond those their role already allows.
    #[serde(default)]
    pub app_grants: BTreeSet<String>,
}

impl User {
    pub fn new(user_id: impl Into<String>, role: Role) -> Self {
        let user_id = user_id.into();
        Self {
            display_name: user_id.clone(),
            user_id,
            role,
            app_grants: BTreeSet::new(),
        }
    }

    pub fn with_grant(mut self, app_id: impl Into<String>) -> Self {
        self.app_grants.insert(app_id.into());
        self
    }
}

/// The live app definition together with the workbook revision it pins,
/// read in one step.
#[derive(Debug, Clone)]
pub struct LiveApp {
    pub definition: Arc<AppDefinition>,
    pub app_version: StoredVersion,
    /// Pristine and fully calculated; clone it before running a submission.
    pub workbook: Arc<Workbook>,
    pub workbook_version: StoredVersion,
    /// Choice-list options as offered when the definition is fetched.
    pub choices: Arc<BTreeMap<String, Vec<CellValue>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSummary {
    pub app_id: String,
    pub title: String,
    pub revision: u32,
    pub workbook_ref: WorkbookRef,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
    #[error("unknown revision {asset}@{revision}")]
    UnknownRevision { asset: String, revision: u32 },
    #[error("{asset}@{revision} is {state:?}, not a draft")]
    NotDraft {
        asset: String,
        revision: u32,
        state: VersionState,
    },
    #[error("{asset}@{revision} is {state:?}, not archived")]
    NotArchived {
        asset: String,
        revision: u32,
        state: VersionState,
    },
    #[error("no published version of `{0}`")]
    NoPublishedVersion(String),
    #[error("content rejected: {}", .0.join("; "))]
    ContentInvalid(Vec<String>),
    #[error("invalid asset id `{0}`")]
    InvalidAssetId(String),
    #[error("asset `{asset}` holds {existing:?} documents, not {uploaded:?}")]
    KindMismatch {
        asset: String,
        existing: AssetKind,
        uploaded: AssetKind,
    },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("store is damaged: {0}")]
    Corrupt(String),
    #[error("replay failed: {0}")]
    Replay(#[from] SubmitError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
struct Asset {
    kind: AssetKind,
    /// Index `i` holds revision `i + 1`.
    versions: Vec<StoredVersion>,
    live: Option<u32>,
}

impl Asset {
    fn version(&self, revision: u32) -> Option<&StoredVersion> {
        self.versions.get(revision.checked_sub(1)? as usize)
    }
}

#[derive(Debug, Default)]
struct State {
    assets: BTreeMap<String, Asset>,
}

impl State {
    fn asset(&self, id: &str) -> Result<&Asset> {
        self.assets.get(id).ok_or_else(|| RegistryError::UnknownAsset(id.to_string()))
    }

    fn version(&self, id: &str, revision: u32) -> Result<&StoredVersion> {
        self.asset(id)?.version(revision).ok_or_else(|| RegistryError::UnknownRevision {
            asset: id.to_string(),
            revision,
        })
    }

    fn live_map(&self) -> BTreeMap<String, u32> {
        self.assets
            .iter()
            .filter_map(|(id, a)| a.live.map(|r| (id.clone(), r)))
            .collect()
    }
}

struct LoadedApp {
    definition: Arc<AppDefinition>,
    choices: Arc<BTreeMap<String, Vec<CellValue>>>,
}

enum Transition {
    Publish { note: String },
    Rollback,
}

pub struct Registry {
    root: PathBuf,
    cell_cap: usize,
    state: RwLock<State>,
    /// Serializes every mutation of versions and the live pointer.
    writer: Mutex<()>,
    users: RwLock<BTreeMap<String, User>>,
    audit: Mutex<AuditLog>,
    workbooks: Mutex<HashMap<(String, u32), Arc<Workbook>>>,
    apps: Mutex<HashMap<(String, u32), Arc<LoadedApp>>>,
}

impl Registry {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_cap(root, DEFAULT_CELL_CAP)
    }

    /// Opens or creates a store, checking every stored content hash and
    /// repairing state left by an interrupted write.
    pub fn open_with_cap(root: impl AsRef<Path>, cell_cap: usize) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let live: BTreeMap<String, u32> = match fs::read(root.join(store::LIVE_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| RegistryError::Corrupt(format!("{}: {e}", store::LIVE_FILE)))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        let mut state = State::default();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !entry.file_type()?.is_dir() || !is_valid_asset_id(&name) {
                continue;
            }
            if let Some(asset) = load_asset(&root, &name, live.get(&name).copied())? {
                state.assets.insert(name, asset);
            }
        }
        for (id, rev) in &live {
            if state.version(id, *rev).is_err() {
                return Err(RegistryError::Corrupt(format!("live revision {id}@{rev} is missing")));
            }
        }
        let audit = AuditLog::open(root.join(store::AUDIT_FILE))?;
        Ok(Self {
            root,
            cell_cap,
            state: RwLock::new(state),
            writer: Mutex::new(()),
            users: RwLock::new(BTreeMap::new()),
            audit: Mutex::new(audit),
            workbooks: Mutex::new(HashMap::new()),
            apps: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    // ---- users

    /// Adds or replaces a user in the local user table.
    pub fn set_user(&self, user: User) {
        self.users.write().insert(user.user_id.clone(), user);
    }

    pub fn user(&self, user_id: &str) -> Option<User> {
        self.users.read().get(user_id).cloned()
    }

    pub fn grant(&self, admin_id: &str, user_id: &str, app_id: &str) -> Result<()> {
        self.require(admin_id, Role::Admin)?;
        let mut users = self.users.write();
        let user = users
            .get_mut(user_id)
            .ok_or_else(|| RegistryError::PermissionDenied(format!("unknown user `{user_id}`")))?;
        user.app_grants.insert(app_id.to_string());
        Ok(())
    }

    fn require(&self, user_id: &str, role: Role) -> Result<User> {
        let user = self
            .user(user_id)
            .ok_or_else(|| RegistryError::PermissionDenied(format!("unknown user `{user_id}`")))?;
        if user.role < role {
            return Err(RegistryError::PermissionDenied(format!(
                "{} requires {}",
                user.user_id,
                role.as_str()
            )));
        }
        Ok(user)
    }

    // ---- uploads

    /// Stores a new DRAFT revision. Workbooks must load within the cell cap;
    /// app definitions must validate against the workbook revision they pin.
    /// For app definitions the asset id is the document's `app_id`.
    pub fn upload(
        &self,
        author_id: &str,
        kind: AssetKind,
        asset_id: Option<&str>,
        content: &str,
    ) -> Result<StoredVersion> {
        let author = self.require(author_id, Role::Author)?;
        let (id, parsed_app) = match kind {
            AssetKind::Workbook => {
                let id = asset_id.ok_or_else(|| RegistryError::ContentInvalid(vec!["a workbook id is required".into()]))?;
                (id.to_string(), None)
            }
            AssetKind::Appdef => {
                let def = AppDefinition::from_json(content).map_err(|e| RegistryError::ContentInvalid(vec![e.to_string()]))?;
                if let Some(given) = asset_id {
                    if given != def.app_id {
                        return Err(RegistryError::ContentInvalid(vec![format!(
                            "document app_id `{}` does not match `{given}`",
                            def.app_id
                        )]));
                    }
                }
                (def.app_id.clone(), Some(def))
            }
        };
        if !is_valid_asset_id(&id) {
            return Err(RegistryError::InvalidAssetId(id));
        }

        let _w = self.writer.lock();
        let revision = {
            let state = self.state.read();
            match state.assets.get(&id) {
                Some(a) if a.kind != kind => {
                    return Err(RegistryError::KindMismatch {
                        asset: id,
                        existing: a.kind,
                        uploaded: kind,
                    })
                }
                Some(a) => a.versions.len() as u32 + 1,
                None => 1,
            }
        };

        let mut pins = None;
        let mut loaded_wb = None;
        match parsed_app {
            None => {
                let mut wb = Workbook::load_with_cap(content, self.cell_cap)
                    .map_err(|e| RegistryError::ContentInvalid(vec![e.to_string()]))?;
                wb.set_origin(WorkbookRef::new(id.clone(), revision));
                wb.recalc_full();
                loaded_wb = Some(Arc::new(wb));
            }
            Some(def) => {
                let pinned = def.workbook_ref.clone();
                let wb = match self.state.read().version(&pinned.id, pinned.revision) {
                    Ok(v) if v.kind == AssetKind::Workbook => self.load_workbook(&pinned.id, pinned.revision)?,
                    _ => {
                        return Err(RegistryError::ContentInvalid(vec![format!(
                            "pinned workbook {pinned} does not exist"
                        )]))
                    }
                };
                let report = validate_appdef(&def, &wb);
                if !report.is_ok() {
                    return Err(RegistryError::ContentInvalid(
                        report
                            .errors
                            .iter()
                            .map(|e| format!("{}: {:?}: {}", e.component_id, e.kind, e.reason))
                            .collect(),
                    ));
                }
                pins = Some(pinned);
            }
        }

        let version = StoredVersion {
            asset_id: id.clone(),
            kind,
            revision,
            content_hash: sha256_hex(content.as_bytes()),
            state: VersionState::Draft,
            uploaded_by: author.user_id,
            uploaded_at: Utc::now(),
            approval: None,
            pins,
        };
        let dir = store::revision_dir(&self.root, &id, revision);
        if dir.exists() {
            // leftover of an upload interrupted before its meta was written
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        store::atomic_write(&dir.join("content"), content.as_bytes())?;
        write_meta(&self.root, &version)?;

        if let Some(wb) = loaded_wb {
            self.workbooks.lock().insert((id.clone(), revision), wb);
        }
        let mut state = self.state.write();
        let asset = state.assets.entry(id).or_insert_with(|| Asset {
            kind,
            versions: Vec::new(),
            live: None,
        });
        asset.versions.push(version.clone());
        Ok(version)
    }

    // ---- publish / rollback

    pub fn approve_and_publish(&self, admin_id: &str, asset_id: &str, revision: u32, note: &str) -> Result<StoredVersion> {
        self.transition(admin_id, asset_id, revision, Transition::Publish { note: note.to_string() })
    }

    /// Makes an archived revision live again. Rolling back from a state with
    /// nothing published is allowed.
    pub fn rollback(&self, admin_id: &str, asset_id: &str, revision: u32) -> Result<StoredVersion> {
        self.transition(admin_id, asset_id, revision, Transition::Rollback)
    }

    fn transition(&self, admin_id: &str, asset_id: &str, revision: u32, how: Transition) -> Result<StoredVersion> {
        let admin = self.require(admin_id, Role::Admin)?;
        let _w = self.writer.lock();

        let (moves, live_before) = {
            let state = self.state.read();
            let target = state.version(asset_id, revision)?;
            match (&how, target.state) {
                (Transition::Publish { .. }, VersionState::Draft) => {}
                (Transition::Publish { .. }, s) => {
                    return Err(RegistryError::NotDraft {
                        asset: asset_id.to_string(),
                        revision,
                        state: s,
                    })
                }
                (Transition::Rollback, VersionState::Archived) => {}
                (Transition::Rollback, s) => {
                    return Err(RegistryError::NotArchived {
                        asset: asset_id.to_string(),
                        revision,
                        state: s,
                    })
                }
            }
            let mut moves = vec![(asset_id.to_string(), revision)];
            if let Some(pin) = &target.pins {
                let wb = state.version(&pin.id, pin.revision)?;
                if wb.state != VersionState::Published {
                    moves.push((pin.id.clone(), pin.revision));
                }
            }
            // a workbook may only leave the live slot if no other live app needs it
            for (id, rev) in &moves {
                let asset = state.asset(id)?;
                let Some(current) = asset.live else { continue };
                if asset.kind != AssetKind::Workbook || current == *rev {
                    continue;
                }
                let leaving = WorkbookRef::new(id.clone(), current);
                for (app_id, app) in &state.assets {
                    if app_id == asset_id || app.kind != AssetKind::Appdef {
                        continue;
                    }
                    let live_pin = app.live.and_then(|r| app.version(r)).and_then(|v| v.pins.as_ref());
                    if live_pin == Some(&leaving) {
                        return Err(RegistryError::Conflict(format!(
                            "workbook {leaving} is in use by live app `{app_id}`"
                        )));
                    }
                }
            }
            (moves, state.live_map())
        };

        // warm the caches so readers never parse under the new pointer
        for (id, rev) in &moves {
            let kind = self.state.read().asset(id)?.kind;
            match kind {
                AssetKind::Appdef => {
                    self.load_app(id, *rev)?;
                }
                AssetKind::Workbook => {
                    self.load_workbook(id, *rev)?;
                }
            }
        }

        let approval = ApprovalRecord {
            approver: admin.user_id,
            at: Utc::now(),
            note: match how {
                Transition::Publish { note } => note,
                Transition::Rollback => format!("rollback to revision {revision}"),
            },
        };
        let mut published = Vec::new();
        for (id, rev) in &moves {
            let mut v = self.state.read().version(id, *rev)?.clone();
            v.state = VersionState::Published;
            v.approval = Some(approval.clone());
            write_meta(&self.root, &v)?;
            published.push(v);
        }
        let mut live_after = live_before.clone();
        for (id, rev) in &moves {
            live_after.insert(id.clone(), *rev);
        }
        let pointer = serde_json::to_vec_pretty(&live_after).expect("live map serializes");
        store::atomic_write(&self.root.join(store::LIVE_FILE), &pointer)?;

        let mut archived = Vec::new();
        for (id, _) in &moves {
            if let Some(old) = live_before.get(id) {
                if live_after.get(id) != Some(old) {
                    let mut v = self.state.read().version(id, *old)?.clone();
                    v.state = VersionState::Archived;
                    write_meta(&self.root, &v)?;
                    archived.push(v);
                }
            }
        }

        let mut state = self.state.write();
        for v in published.iter().chain(&archived) {
            let asset = state.assets.get_mut(&v.asset_id).expect("asset exists");
            asset.versions[v.revision as usize - 1] = v.clone();
            if v.state == VersionState::Published {
                asset.live = Some(v.revision);
            }
        }
        Ok(published.into_iter().next().expect("target is first"))
    }

    // ---- reads

    /// The live definition of `app_id` and the workbook revision it pins.
    /// Readers see the state before or after any publish or rollback, never
    /// a mixture.
    pub fn get_live(&self, user_id: &str, app_id: &str) -> Result<LiveApp> {
        let user = self
            .user(user_id)
            .ok_or_else(|| RegistryError::PermissionDenied(format!("unknown user `{user_id}`")))?;
        let privileged = user.role >= Role::Author || user.app_grants.contains(app_id);
        let state = self.state.read();
        let live = state
            .assets
            .get(app_id)
            .filter(|a| a.kind == AssetKind::Appdef)
            .and_then(|a| a.live.and_then(|r| a.version(r)));
        let Some(app_version) = live else {
            return Err(if privileged {
                RegistryError::NoPublishedVersion(app_id.to_string())
            } else {
                RegistryError::PermissionDenied(format!("{user_id} may not run `{app_id}`"))
            });
        };
        let app = self.load_app(app_id, app_version.revision)?;
        if !privileged && !app.definition.acl.allows(user_id, user.role) {
            return Err(RegistryError::PermissionDenied(format!("{user_id} may not run `{app_id}`")));
        }
        let pin = app_version.pins.clone().expect("app definitions pin a workbook");
        let workbook_version = state.version(&pin.id, pin.revision)?.clone();
        let workbook = self.load_workbook(&pin.id, pin.revision)?;
        Ok(LiveApp {
            definition: app.definition.clone(),
            app_version: app_version.clone(),
            workbook,
            workbook_version,
            choices: app.choices.clone(),
        })
    }

    /// Live apps the user may run.
    pub fn list_apps(&self, user_id: &str) -> Result<Vec<AppSummary>> {
        let user = self
            .user(user_id)
            .ok_or_else(|| RegistryError::PermissionDenied(format!("unknown user `{user_id}`")))?;
        let state = self.state.read();
        let mut out = Vec::new();
        for (id, asset) in &state.assets {
            if asset.kind != AssetKind::Appdef {
                continue;
            }
            let Some(v) = asset.live.and_then(|r| asset.version(r)) else { continue };
            let app = self.load_app(id, v.revision)?;
            let def = &app.definition;
            if user.role >= Role::Author || user.app_grants.contains(id) || def.acl.allows(user_id, user.role) {
                out.push(AppSummary {
                    app_id: id.clone(),
                    title: def.title.clone(),
                    revision: v.revision,
                    workbook_ref: def.workbook_ref.clone(),
                });
            }
        }
        Ok(out)
    }

    /// Every revision of an asset, including drafts and archived ones.
    pub fn versions(&self, user_id: &str, asset_id: &str) -> Result<Vec<StoredVersion>> {
        self.require(user_id, Role::Author)?;
        Ok(self.state.read().asset(asset_id)?.versions.clone())
    }

    pub fn version(&self, asset_id: &str, revision: u32) -> Result<StoredVersion> {
        Ok(self.state.read().version(asset_id, revision)?.clone())
    }

    /// Stored bytes of any revision, checked against the hash taken at upload.
    pub fn content(&self, user_id: &str, asset_id: &str, revision: u32) -> Result<String> {
        self.require(user_id, Role::Author)?;
        let expected = self.state.read().version(asset_id, revision)?.content_hash.clone();
        self.read_content(asset_id, revision, &expected)
    }

    fn read_content(&self, asset_id: &str, revision: u32, expected_hash: &str) -> Result<String> {
        let bytes = fs::read(store::revision_dir(&self.root, asset_id, revision).join("content"))?;
        if sha256_hex(&bytes) != expected_hash {
            return Err(RegistryError::Corrupt(format!("content of {asset_id}@{revision} changed")));
        }
        String::from_utf8(bytes).map_err(|_| RegistryError::Corrupt(format!("{asset_id}@{revision} is not UTF-8")))
    }

    /// Pristine, calculated instance of a workbook revision in any state.
    pub fn workbook(&self, id: &str, revision: u32) -> Result<Arc<Workbook>> {
        let kind = self.state.read().version(id, revision)?.kind;
        if kind != AssetKind::Workbook {
            return Err(RegistryError::UnknownAsset(id.to_string()));
        }
        self.load_workbook(id, revision)
    }

    /// App definition of a revision in any state.
    pub fn app(&self, id: &str, revision: u32) -> Result<Arc<AppDefinition>> {
        let kind = self.state.read().version(id, revision)?.kind;
        if kind != AssetKind::Appdef {
            return Err(RegistryError::UnknownAsset(id.to_string()));
        }
        Ok(self.load_app(id, revision)?.definition.clone())
    }

    // Neither loader takes the state lock: callers may already hold it.
    fn load_workbook(&self, id: &str, revision: u32) -> Result<Arc<Workbook>> {
        let key = (id.to_string(), revision);
        if let Some(wb) = self.workbooks.lock().get(&key) {
            return Ok(wb.clone());
        }
        let hash = self.meta_hash(id, revision)?;
        let text = self.read_content(id, revision, &hash)?;
        let mut wb = Workbook::load_with_cap(&text, self.cell_cap)
            .map_err(|e| RegistryError::Corrupt(format!("{id}@{revision}: {e}")))?;
        wb.set_origin(WorkbookRef::new(id, revision));
        wb.recalc_full();
        let wb = Arc::new(wb);
        self.workbooks.lock().entry(key).or_insert(wb.clone());
        Ok(wb)
    }

    fn load_app(&self, id: &str, revision: u32) -> Result<Arc<LoadedApp>> {
        let key = (id.to_string(), revision);
        if let Some(app) = self.apps.lock().get(&key) {
            return Ok(app.clone());
        }
        let hash = self.meta_hash(id, revision)?;
        let text = self.read_content(id, revision, &hash)?;
        let def = AppDefinition::from_json(&text).map_err(|e| RegistryError::Corrupt(format!("{id}@{revision}: {e}")))?;
        let wb = self.load_workbook(&def.workbook_ref.id, def.workbook_ref.revision)?;
        let app = Arc::new(LoadedApp {
            choices: Arc::new(choice_options(&def, &wb)),
            definition: Arc::new(def),
        });
        self.apps.lock().entry(key).or_insert(app.clone());
        Ok(app)
    }

    fn meta_hash(&self, id: &str, revision: u32) -> Result<String> {
        let path = store::revision_dir(&self.root, id, revision).join("meta");
        let v: StoredVersion = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| RegistryError::Corrupt(format!("{}: {e}", path.display())))?;
        Ok(v.content_hash)
    }

    // ---- audit

    /// Appends a run record; it is on disk when this returns. Both
    /// revisions must exist.
    pub fn record_audit(&self, run: NewAuditRecord) -> Result<AuditRecord> {
        {
            let state = self.state.read();
            state.version(&run.app_id, run.app_revision)?;
            state.version(&run.workbook_id, run.workbook_revision)?;
        }
        Ok(self.audit.lock().append(run)?)
    }

    pub fn query_audit(&self, user_id: &str, filter: &AuditFilter) -> Result<Vec<AuditRecord>> {
        self.require(user_id, Role::Admin)?;
        Ok(self.audit.lock().query(filter))
    }

    /// All records, for in-process checks.
    pub fn audit_records(&self) -> Vec<AuditRecord> {
        self.audit.lock().records().to_vec()
    }

    /// Re-reads the audit file from disk and checks the whole chain.
    pub fn verify_audit(&self) -> Result<usize> {
        let log = self.audit.lock();
        Ok(verify_file(log.path())?)
    }

    /// Re-runs an audited submission on a fresh instance of its pinned
    /// revisions.
    pub fn replay(&self, record: &AuditRecord) -> Result<RunResult> {
        let def = self.app(&record.run.app_id, record.run.app_revision)?;
        let mut wb = (*self.workbook(&record.run.workbook_id, record.run.workbook_revision)?).clone();
        Ok(apply_submission(&def, &mut wb, &record.run.inputs, record.run.pressed.as_deref())?)
    }
}

fn write_meta(root: &Path, v: &StoredVersion) -> Result<()> {
    let path = store::revision_dir(root, &v.asset_id, v.revision).join("meta");
    let text = serde_json::to_vec_pretty(v).expect("version serializes");
    store::atomic_write(&path, &text)?;
    Ok(())
}

/// Reads one asset directory. State comes from the live pointer and the
/// approval record: live is PUBLISHED, approved but not live is ARCHIVED,
/// everything else is DRAFT. Meta files that disagree are rewritten.
fn load_asset(root: &Path, id: &str, live: Option<u32>) -> Result<Option<Asset>> {
    let dir = root.join(id);
    let mut revisions: Vec<u32> = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        if let Ok(rev) = entry.file_name().to_string_lossy().parse::<u32>() {
            if entry.file_type()?.is_dir() && rev > 0 {
                revisions.push(rev);
            }
        }
    }
    revisions.sort_unstable();
    let mut versions = Vec::new();
    for (i, rev) in revisions.iter().enumerate() {
        let rev_dir = store::revision_dir(root, id, *rev);
        let meta_path = rev_dir.join("meta");
        if *rev != i as u32 + 1 {
            return Err(RegistryError::Corrupt(format!("{id}: revision {} is missing", i + 1)));
        }
        if !meta_path.exists() && i + 1 == revisions.len() {
            // interrupted upload; it was never acknowledged
            fs::remove_dir_all(&rev_dir)?;
            break;
        }
        let mut v: StoredVersion = serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| RegistryError::Corrupt(format!("{}: {e}", meta_path.display())))?;
        if v.asset_id != id || v.revision != *rev {
            return Err(RegistryError::Corrupt(format!("{} names {}@{}", meta_path.display(), v.asset_id, v.revision)));
        }
        let bytes = fs::read(rev_dir.join("content"))?;
        if sha256_hex(&bytes) != v.content_hash {
            return Err(RegistryError::Corrupt(format!("content of {id}@{rev} does not match its hash")));
        }
        let derived = if live == Some(*rev) {
            VersionState::Published
        } else if v.approval.is_some() {
            VersionState::Archived
        } else {
            VersionState::Draft
        };
        if v.state != derived {
            v.state = derived;
            write_meta(root, &v)?;
        }
        versions.push(v);
    }
    let Some(first) = versions.first() else { return Ok(None) };
    let kind = first.kind;
    if versions.iter().any(|v| v.kind != kind) {
        return Err(RegistryError::Corrupt(format!("{id} mixes asset kinds")));
    }
    Ok(Some(Asset { kind, versions, live }))
}
