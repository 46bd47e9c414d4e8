//! File layout helpers: `<root>/<asset>/<revision>/{content,meta}`, the
//! live pointer file `<root>/live.json` and `<root>/audit.log`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const LIVE_FILE: &str = "live.json";
pub const AUDIT_FILE: &str = "audit.log";

/// Asset ids double as directory names: ASCII letters, digits, `_` and `-`,
/// starting with a letter or digit. No dots, so they never collide with the
/// store's own files.
pub fn is_valid_asset_id(id: &str) -> bool {
    let mut chars = id.chars();
    id.len() <= 128
        && chars.next().is_some_and(|c| c.is_ascii_alphanumeric())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn revision_dir(root: &Path, asset: &str, revision: u32) -> PathBuf {
    root.join(asset).join(revision.to_string())
}

/// Writes via a synced temporary file and a rename, so readers and crash
/// recovery see either the old or the new bytes.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        // directory sync makes the rename durable; not every platform allows it
        if let Ok(dir) = File::open(parent) {
            let _ = dir.sync_all();
        }
    }
    Ok(())
}
