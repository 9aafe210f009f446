use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EhrError;
use crate::crypto::hash_digest;

/// Keyed JSON collections. Each `put` replaces one document atomically.
pub trait DocumentStore: Send + Sync {
    fn get(&self, collection: &str, key: &str) -> Result<Option<Value>, EhrError>;
    fn put(&self, collection: &str, key: &str, value: &Value) -> Result<(), EhrError>;
    fn delete(&self, collection: &str, key: &str) -> Result<(), EhrError>;
    /// All documents of a collection, ordered by key.
    fn list(&self, collection: &str) -> Result<Vec<(String, Value)>, EhrError>;
}

#[derive(Default)]
pub struct MemoryDocumentStore {
    docs: RwLock<BTreeMap<String, BTreeMap<String, Value>>>,
}

impl MemoryDocumentStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl DocumentStore for MemoryDocumentStore {
    fn get(&self, collection: &str, key: &str) -> Result<Option<Value>, EhrError> {
        Ok(self
            .docs
            .read()
            .expect("docstore lock")
            .get(collection)
            .and_then(|c| c.get(key))
            .cloned())
    }

    fn put(&self, collection: &str, key: &str, value: &Value) -> Result<(), EhrError> {
        self.docs
            .write()
            .expect("docstore lock")
            .entry(collection.to_string())
            .or_default()
            .insert(key.to_string(), value.clone());
        Ok(())
    }

    fn delete(&self, collection: &str, key: &str) -> Result<(), EhrError> {
        if let Some(c) = self
            .docs
            .write()
            .expect("docstore lock")
            .get_mut(collection)
        {
            c.remove(key);
        }
        Ok(())
    }

    fn list(&self, collection: &str) -> Result<Vec<(String, Value)>, EhrError> {
        Ok(self
            .docs
            .read()
            .expect("docstore lock")
            .get(collection)
            .map(|c| c.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default())
    }
}

#[derive(Serialize, Deserialize)]
struct Stored {
    key: String,
    value: Value,
}

/// One JSON file per document under `<dir>/<collection>/`. File names are
/// hashes of the key so any string is a valid key.
pub struct FileDocumentStore {
    dir: PathBuf,
}

impl FileDocumentStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, EhrError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io)?;
        Ok(Self { dir })
    }

    fn path(&self, collection: &str, key: &str) -> Result<PathBuf, EhrError> {
        if collection.is_empty()
            || !collection
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(EhrError::DocumentStore(format!(
                "bad collection name {collection:?}"
            )));
        }
        Ok(self
            .dir
            .join(collection)
            .join(format!("{}.json", hash_digest(key.as_bytes()).to_hex())))
    }
}

fn io(e: std::io::Error) -> EhrError {
    EhrError::DocumentStore(e.to_string())
}

impl DocumentStore for FileDocumentStore {
    fn get(&self, collection: &str, key: &str) -> Result<Option<Value>, EhrError> {
        let path = self.path(collection, key)?;
        match std::fs::read(&path) {
            Ok(bytes) => {
                let doc: Stored = serde_json::from_slice(&bytes)
                    .map_err(|e| EhrError::DocumentStore(format!("{}: {e}", path.display())))?;
                Ok(Some(doc.value))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(e)),
        }
    }

    fn put(&self, collection: &str, key: &str, value: &Value) -> Result<(), EhrError> {
        let path = self.path(collection, key)?;
        std::fs::create_dir_all(path.parent().expect("collection dir")).map_err(io)?;
        let doc = Stored {
            key: key.to_string(),
            value: value.clone(),
        };
        let bytes = serde_json::to_vec(&doc).map_err(|e| EhrError::DocumentStore(e.to_string()))?;
        crate::store::atomic_write(&path, &bytes).map_err(io)
    }

    fn delete(&self, collection: &str, key: &str) -> Result<(), EhrError> {
        match std::fs::remove_file(self.path(collection, key)?) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io(e)),
            _ => Ok(()),
        }
    }

    fn list(&self, collection: &str) -> Result<Vec<(String, Value)>, EhrError> {
        let dir = self.dir.join(collection);
        self.path(collection, "")?;
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let doc: Stored = serde_json::from_slice(&std::fs::read(&path).map_err(io)?)
                .map_err(|e| EhrError::DocumentStore(format!("{}: {e}", path.display())))?;
            out.push((doc.key, doc.value));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}
