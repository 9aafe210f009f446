use std::path::Path;
use std::sync::Arc;

use super::{load_chain, read_meta, Committed, LedgerBackend, NodeError, NodeMeta, STORE_DIR};
use crate::ledger::{ChainState, Transaction};
use crate::store::{ContentId, ContentStore};

/// A node rebuilt from nothing but its own directory. The chain is fully
/// re-validated on open, certificates included.
pub struct ReplicaNode {
    meta: NodeMeta,
    chain: Arc<ChainState>,
    store: ContentStore,
}

impl ReplicaNode {
    pub fn open(dir: &Path) -> Result<Self, NodeError> {
        let meta = read_meta(dir)?;
        let chain = load_chain(dir, &meta.chain)?;
        let store_dir = dir.join(STORE_DIR);
        if !store_dir.is_dir() {
            return Err(NodeError::Layout(format!(
                "{} has no content store",
                dir.display()
            )));
        }
        let store = ContentStore::open(store_dir, &meta.node_id)?;
        Ok(Self {
            meta,
            chain: Arc::new(chain),
            store,
        })
    }

    pub fn meta(&self) -> &NodeMeta {
        &self.meta
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }
}

impl LedgerBackend for ReplicaNode {
    fn submit(&self, _tx: Transaction) -> Result<Committed, NodeError> {
        Err(NodeError::ReadOnly)
    }

    fn snapshot(&self) -> Arc<ChainState> {
        self.chain.clone()
    }

    fn put_blob(&self, _bytes: &[u8]) -> Result<ContentId, NodeError> {
        Err(NodeError::ReadOnly)
    }

    fn get_blob(&self, cid: &ContentId) -> Result<Vec<u8>, NodeError> {
        Ok(self.store.get(cid)?)
    }
}
