use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use super::{
    append_blocks, existing_location, load_chain, now_ms, open_store, write_meta, Committed,
    LedgerBackend, NodeError, NodeMeta,
};
use crate::ledger::{mine_pow, ChainConfig, ChainState, Seal, Transaction};
use crate::store::{ContentId, ContentStore};

/// A single node that seals each submission into its own proof-of-work block.
pub struct PowNode {
    dir: Option<PathBuf>,
    bits: u32,
    chain: Mutex<ChainState>,
    snapshot: RwLock<Arc<ChainState>>,
    store: ContentStore,
}

impl PowNode {
    pub fn in_memory(bits: u32) -> Self {
        let chain = ChainState::new(ChainConfig::pow(bits));
        Self {
            dir: None,
            bits,
            snapshot: RwLock::new(Arc::new(chain.clone())),
            chain: Mutex::new(chain),
            store: ContentStore::in_memory("node-0"),
        }
    }

    pub fn open(dir: &Path, bits: u32) -> Result<Self, NodeError> {
        let config = ChainConfig::pow(bits);
        write_meta(
            dir,
            &NodeMeta {
                node_id: "node-0".into(),
                chain: config.clone(),
            },
        )?;
        let chain = load_chain(dir, &config)?;
        if chain.height() == 0 {
            append_blocks(dir, &[])?;
        }
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            bits,
            snapshot: RwLock::new(Arc::new(chain.clone())),
            chain: Mutex::new(chain),
            store: open_store(Some(dir), "node-0")?,
        })
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }
}

impl LedgerBackend for PowNode {
    fn submit(&self, tx: Transaction) -> Result<Committed, NodeError> {
        let mut chain = self.chain.lock().expect("chain lock");
        if let Some(c) = existing_location(&chain, &tx) {
            return Ok(c);
        }
        chain.append_pending(tx.clone())?;
        let seal = Seal::Pow {
            nonce: 0,
            difficulty_bits: self.bits,
        };
        let block = chain.form_block(chain.config().max_txs, now_ms(), seal);
        let (block, _) = mine_pow(block, self.bits);
        chain.apply_block(block.clone())?;
        if let Some(dir) = &self.dir {
            append_blocks(dir, std::slice::from_ref(&block))?;
        }
        *self.snapshot.write().expect("snapshot lock") = Arc::new(chain.clone());
        existing_location(&chain, &tx).ok_or(NodeError::Stalled)
    }

    fn snapshot(&self) -> Arc<ChainState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn put_blob(&self, bytes: &[u8]) -> Result<ContentId, NodeError> {
        let cid = self.store.put(bytes)?;
        self.store.announce(&cid, self.store.node_id())?;
        Ok(cid)
    }

    fn get_blob(&self, cid: &ContentId) -> Result<Vec<u8>, NodeError> {
        Ok(self.store.get(cid)?)
    }
}
