//! Content-addressed blob store with a small reference registry.
//!
//! Blobs are addressed by the SHA-256 of their bytes. The registry records,
//! per content id, the blob size and which nodes announced that they hold
//! it. Blobs no larger than the inline threshold resolve to their bytes
//! directly; larger ones resolve to the holder set.

mod backend;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_digest, Digest};

pub(crate) use backend::atomic_write;
pub use backend::{BlobBackend, FsBackend, MemoryBackend};

pub const DEFAULT_INLINE_THRESHOLD: usize = 1024;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ContentId(pub Digest);

impl ContentId {
    pub fn of(bytes: &[u8]) -> Self {
        ContentId(hash_digest(bytes))
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cid:{}", &self.to_hex()[..16])
    }
}

impl FromStr for ContentId {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
            .map(ContentId)
            .map_err(|_| StoreError::BadContentId(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DhtPayload {
    Inline(#[serde(with = "hex_bytes")] Vec<u8>),
    Holders(BTreeSet<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhtRecord {
    pub cid: ContentId,
    pub payload: DhtPayload,
}

impl DhtRecord {
    pub fn is_inline(&self) -> bool {
        matches!(self.payload, DhtPayload::Inline(_))
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("content {0} not found")]
    NotFound(ContentId),
    #[error("stored bytes for {0} do not hash to their id")]
    IntegrityMismatch(ContentId),
    #[error("node {0} is not registered")]
    UnknownNode(String),
    #[error("malformed content id {0:?}")]
    BadContentId(String),
    #[error("registry file is corrupt: {0}")]
    Registry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
struct Registry {
    nodes: BTreeSet<String>,
    sizes: BTreeMap<ContentId, u64>,
    holders: BTreeMap<ContentId, BTreeSet<String>>,
}

pub struct ContentStore {
    backend: Box<dyn BlobBackend>,
    registry: RwLock<Registry>,
    registry_path: Option<PathBuf>,
    node_id: String,
    inline_threshold: usize,
}

impl fmt::Debug for ContentStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContentStore")
            .field("node_id", &self.node_id)
            .field("registry_path", &self.registry_path)
            .finish_non_exhaustive()
    }
}

impl ContentStore {
    /// Opens (or creates) a store rooted at `dir`: blobs under `dir/blobs`,
    /// the registry in `dir/registry.json`.
    pub fn open(dir: impl AsRef<Path>, node_id: &str) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let registry_path = dir.join("registry.json");
        let registry = if registry_path.exists() {
            serde_json::from_slice(&std::fs::read(&registry_path)?)
                .map_err(|e| StoreError::Registry(e.to_string()))?
        } else {
            Registry::default()
        };
        let store = Self {
            backend: Box::new(FsBackend::new(dir.join("blobs"))?),
            registry: RwLock::new(registry),
            registry_path: Some(registry_path),
            node_id: node_id.to_string(),
            inline_threshold: DEFAULT_INLINE_THRESHOLD,
        };
        store.register_node(node_id)?;
        Ok(store)
    }

    pub fn in_memory(node_id: &str) -> Self {
        let mut registry = Registry::default();
        registry.nodes.insert(node_id.to_string());
        Self {
            backend: Box::new(MemoryBackend::default()),
            registry: RwLock::new(registry),
            registry_path: None,
            node_id: node_id.to_string(),
            inline_threshold: DEFAULT_INLINE_THRESHOLD,
        }
    }

    pub fn with_inline_threshold(mut self, bytes: usize) -> Self {
        self.inline_threshold = bytes;
        self
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn inline_threshold(&self) -> usize {
        self.inline_threshold
    }

    pub fn register_node(&self, node: &str) -> Result<(), StoreError> {
        let changed = self
            .registry
            .write()
            .expect("registry lock")
            .nodes
            .insert(node.to_string());
        if changed {
            self.persist()?;
        }
        Ok(())
    }

    pub fn put(&self, blob: &[u8]) -> Result<ContentId, StoreError> {
        let cid = ContentId::of(blob);
        if !self.backend.contains(&cid) {
            self.backend.write(&cid, blob)?;
        }
        let changed = {
            let mut reg = self.registry.write().expect("registry lock");
            let sized = reg.sizes.insert(cid, blob.len() as u64).is_none();
            let held = reg
                .holders
                .entry(cid)
                .or_default()
                .insert(self.node_id.clone());
            sized || held
        };
        if changed {
            self.persist()?;
        }
        Ok(cid)
    }

    /// Returns the stored bytes after checking they still hash to `cid`.
    pub fn get(&self, cid: &ContentId) -> Result<Vec<u8>, StoreError> {
        let bytes = self.backend.read(cid)?.ok_or(StoreError::NotFound(*cid))?;
        if ContentId::of(&bytes) != *cid {
            return Err(StoreError::IntegrityMismatch(*cid));
        }
        Ok(bytes)
    }

    pub fn contains(&self, cid: &ContentId) -> bool {
        self.backend.contains(cid)
    }

    pub fn announce(&self, cid: &ContentId, node: &str) -> Result<(), StoreError> {
        let changed = {
            let mut reg = self.registry.write().expect("registry lock");
            if !reg.nodes.contains(node) {
                return Err(StoreError::UnknownNode(node.to_string()));
            }
            reg.holders
                .entry(*cid)
                .or_default()
                .insert(node.to_string())
        };
        if changed {
            self.persist()?;
        }
        Ok(())
    }

    pub fn resolve(&self, cid: &ContentId) -> Result<DhtRecord, StoreError> {
        let (size, holders) = {
            let reg = self.registry.read().expect("registry lock");
            (
                reg.sizes.get(cid).copied(),
                reg.holders.get(cid).cloned().unwrap_or_default(),
            )
        };
        match size {
            Some(size) if size as usize <= self.inline_threshold => Ok(DhtRecord {
                cid: *cid,
                payload: DhtPayload::Inline(self.get(cid)?),
            }),
            _ if !holders.is_empty() => Ok(DhtRecord {
                cid: *cid,
                payload: DhtPayload::Holders(holders),
            }),
            _ => Err(StoreError::NotFound(*cid)),
        }
    }

    /// Every content id with bytes held locally.
    pub fn cids(&self) -> Result<Vec<ContentId>, StoreError> {
        self.backend.list()
    }

    fn persist(&self) -> Result<(), StoreError> {
        let Some(path) = &self.registry_path else {
            return Ok(());
        };
        let raw = serde_json::to_vec(&*self.registry.read().expect("registry lock"))
            .expect("registry serializes");
        backend::atomic_write(path, &raw)?;
        Ok(())
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn put_get_round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::open(dir.path(), "n0").unwrap();
        let a = store.put(b"scan bytes").unwrap();
        let b = store.put(b"scan bytes").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.get(&a).unwrap(), b"scan bytes");
        assert_eq!(store.cids().unwrap(), vec![a]);
        assert_eq!(
            std::fs::read_dir(dir.path().join("blobs")).unwrap().count(),
            1
        );
    }

    #[test]
    fn empty_blob_is_storable() {
        let store = ContentStore::in_memory("n0");
        let cid = store.put(&[]).unwrap();
        assert_eq!(
            cid.to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert!(store.get(&cid).unwrap().is_empty());
    }

    #[test]
    fn one_bit_changes_the_id() {
        let store = ContentStore::in_memory("n0");
        let blob = vec![7u8; 900];
        let mut flipped = blob.clone();
        flipped[450] ^= 0x10;
        assert_ne!(store.put(&blob).unwrap(), store.put(&flipped).unwrap());
    }

    #[test]
    fn unknown_cid_is_not_found() {
        let store = ContentStore::in_memory("n0");
        let cid = ContentId::of(b"never stored");
        assert!(matches!(store.get(&cid), Err(StoreError::NotFound(_))));
        assert!(matches!(store.resolve(&cid), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn corrupted_backing_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::open(dir.path(), "n0").unwrap();
        let cid = store.put(b"ciphertext block").unwrap();
        let path = dir.path().join("blobs").join(cid.to_hex());
        let mut raw = std::fs::read(&path).unwrap();
        raw[3] ^= 1;
        std::fs::write(&path, raw).unwrap();
        assert!(matches!(
            store.get(&cid),
            Err(StoreError::IntegrityMismatch(_))
        ));
    }

    #[test]
    fn inline_rule_at_the_threshold() {
        let store = ContentStore::in_memory("n0");
        let small = store.put(&[1u8; 900]).unwrap();
        let edge = store.put(&[2u8; 1024]).unwrap();
        let large = store.put(&[3u8; 1025]).unwrap();
        assert_eq!(
            store.resolve(&small).unwrap().payload,
            DhtPayload::Inline(vec![1u8; 900])
        );
        assert!(store.resolve(&edge).unwrap().is_inline());
        assert_eq!(
            store.resolve(&large).unwrap().payload,
            DhtPayload::Holders(BTreeSet::from(["n0".to_string()]))
        );
    }

    #[test]
    fn announcements_accumulate() {
        let store = ContentStore::in_memory("n0");
        store.register_node("n1").unwrap();
        store.register_node("n2").unwrap();
        let cid = ContentId::of(&[9u8; 4096]);
        store.announce(&cid, "n1").unwrap();
        store.announce(&cid, "n2").unwrap();
        store.announce(&cid, "n2").unwrap();
        let want = BTreeSet::from(["n1".to_string(), "n2".to_string()]);
        assert_eq!(
            store.resolve(&cid).unwrap().payload,
            DhtPayload::Holders(want)
        );
        assert!(matches!(
            store.announce(&cid, "ghost"),
            Err(StoreError::UnknownNode(_))
        ));
    }

    #[test]
    fn inline_record_ignores_holders() {
        let store = ContentStore::in_memory("n0");
        store.register_node("n1").unwrap();
        let cid = store.put(b"tiny").unwrap();
        store.announce(&cid, "n1").unwrap();
        assert_eq!(
            store.resolve(&cid).unwrap().payload,
            DhtPayload::Inline(b"tiny".to_vec())
        );
    }

    #[test]
    fn registry_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cid = {
            let store = ContentStore::open(dir.path(), "n0").unwrap();
            store.register_node("n1").unwrap();
            let cid = store.put(&[5u8; 2000]).unwrap();
            store.announce(&cid, "n1").unwrap();
            cid
        };
        let store = ContentStore::open(dir.path(), "n0").unwrap();
        let want = BTreeSet::from(["n0".to_string(), "n1".to_string()]);
        assert_eq!(
            store.resolve(&cid).unwrap().payload,
            DhtPayload::Holders(want)
        );
        assert_eq!(store.get(&cid).unwrap(), vec![5u8; 2000]);
    }

    proptest! {
        #[test]
        fn inline_iff_small(len in 0usize..2100) {
            let store = ContentStore::in_memory("n0");
            let cid = store.put(&vec![0xabu8; len]).unwrap();
            prop_assert_eq!(store.resolve(&cid).unwrap().is_inline(), len <= 1024);
        }

        #[test]
        fn get_never_returns_other_bytes(blob in proptest::collection::vec(any::<u8>(), 0..256), other in proptest::collection::vec(any::<u8>(), 0..256)) {
            let store = ContentStore::in_memory("n0");
            let cid = store.put(&blob).unwrap();
            store.put(&other).unwrap();
            prop_assert_eq!(ContentId::of(&store.get(&cid).unwrap()), cid);
        }
    }
}
