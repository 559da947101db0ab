//! On-disk layout of the file backend.
//!
//! ```text
//! <root>/
//!   meta.json                 id counters
//!   index.log                 append-only journal, one JSON line per write
//!   accounts/<id>.json
//!   statuses/<id>.json
//!   timelines/<owner>-<status>.json
//!   follows/<follower>-<followee>.json
//!   interactions/<digest>.json
//!   peers/<domain>.json
//!   seen/<digest>.json
//!   tombstones/<digest>.json
//!   deliveries/<task id>.json
//!   tokens/<token digest>.json
//!   keys/<account id>.pem     private keys, mode 0600
//! ```
//!
//! Each record is written to a temporary file and renamed into place, so a
//! killed process leaves either the old or the new record.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::StorageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Collection {
    Accounts,
    Statuses,
    Timelines,
    Follows,
    Interactions,
    Peers,
    Seen,
    Tombstones,
    Deliveries,
    Tokens,
}

impl Collection {
    pub(crate) const ALL: [Collection; 10] = [
        Collection::Accounts,
        Collection::Statuses,
        Collection::Timelines,
        Collection::Follows,
        Collection::Interactions,
        Collection::Peers,
        Collection::Seen,
        Collection::Tombstones,
        Collection::Deliveries,
        Collection::Tokens,
    ];

    pub(crate) fn dir(self) -> &'static str {
        match self {
            Collection::Accounts => "accounts",
            Collection::Statuses => "statuses",
            Collection::Timelines => "timelines",
            Collection::Follows => "follows",
            Collection::Interactions => "interactions",
            Collection::Peers => "peers",
            Collection::Seen => "seen",
            Collection::Tombstones => "tombstones",
            Collection::Deliveries => "deliveries",
            Collection::Tokens => "tokens",
        }
    }
}

/// A pending write produced by a state mutation.
#[derive(Debug)]
pub(crate) enum Change {
    Put(Collection, String, Value),
    Delete(Collection, String),
    Meta(Value),
    Key(String, String),
}

/// File-name-safe digest of an arbitrary key.
pub(crate) fn digest_key(key: &str) -> String {
    hex::encode(&Sha256::digest(key.as_bytes())[..16])
}

pub(crate) fn safe_name(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub(crate) struct FileLayout {
    root: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> StorageError {
    StorageError::Io(format!("{}: {e}", path.display()))
}

impl FileLayout {
    pub(crate) fn create(root: &Path) -> Result<Self, StorageError> {
        for collection in Collection::ALL {
            let dir = root.join(collection.dir());
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let keys = root.join("keys");
        fs::create_dir_all(&keys).map_err(|e| io_err(&keys, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub(crate) fn root(&self) -> &Path {
        &self.root
    }

    pub(crate) fn apply(&self, changes: &[Change]) -> Result<(), StorageError> {
        if changes.is_empty() {
            return Ok(());
        }
        let mut journal = String::new();
        for change in changes {
            match change {
                Change::Put(collection, key, value) => {
                    let path = self.record_path(*collection, key);
                    write_atomic(&path, &serde_json::to_vec_pretty(value).expect("json"), false)?;
                    journal.push_str(
                        &serde_json::json!({"op": "put", "collection": collection.dir(), "key": key})
                            .to_string(),
                    );
                }
                Change::Delete(collection, key) => {
                    let path = self.record_path(*collection, key);
                    match fs::remove_file(&path) {
                        Ok(()) => {}
                        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                        Err(e) => return Err(io_err(&path, e)),
                    }
                    journal.push_str(
                        &serde_json::json!({"op": "delete", "collection": collection.dir(), "key": key})
                            .to_string(),
                    );
                }
                Change::Meta(value) => {
                    let path = self.root.join("meta.json");
                    write_atomic(&path, &serde_json::to_vec_pretty(value).expect("json"), false)?;
                    continue;
                }
                Change::Key(name, pem) => {
                    let path = self.root.join("keys").join(format!("{name}.pem"));
                    write_atomic(&path, pem.as_bytes(), true)?;
                    journal.push_str(
                        &serde_json::json!({"op": "put", "collection": "keys", "key": name}).to_string(),
                    );
                }
            }
            journal.push('\n');
        }
        let index = self.root.join("index.log");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| io_err(&index, e))?;
        file.write_all(journal.as_bytes()).map_err(|e| io_err(&index, e))
    }

    fn record_path(&self, collection: Collection, key: &str) -> PathBuf {
        self.root
            .join(collection.dir())
            .join(format!("{}.json", safe_name(key)))
    }

    pub(crate) fn load<T: DeserializeOwned>(&self, collection: Collection) -> Result<Vec<T>, StorageError> {
        let dir = self.root.join(collection.dir());
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|path| {
                let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| StorageError::Corrupt(format!("{}: {e}", path.display())))
            })
            .collect()
    }

    pub(crate) fn load_meta(&self) -> Result<Option<Value>, StorageError> {
        let path = self.root.join("meta.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StorageError::Corrupt(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    pub(crate) fn load_keys(&self) -> Result<Vec<(String, String)>, StorageError> {
        let dir = self.root.join("keys");
        let mut keys = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path();
            if path.extension().is_some_and(|ext| ext == "pem") {
                let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let pem = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                keys.push((name, pem));
            }
        }
        keys.sort();
        Ok(keys)
    }
}

fn write_atomic(path: &Path, bytes: &[u8], private: bool) -> Result<(), StorageError> {
    let tmp = path.with_extension("tmp");
    {
        let mut options = OpenOptions::new();
        options.write(true).create(true).truncate(true);
        #[cfg(unix)]
        if private {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        #[cfg(not(unix))]
        let _ = private;
        let mut file = options.open(&tmp).map_err(|e| io_err(&tmp, e))?;
        file.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        file.sync_data().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
