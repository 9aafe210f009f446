//! Ledger deployments the application layer runs on: an embedded BFT
//! validator cluster, a single proof-of-work node, and a read-only replica
//! recovered from one node's data directory.
//!
//! Every full node keeps its own directory:
//!
//! ```text
//! node-<i>/node.json      chain config and node id
//! node-<i>/chain.ndjson   committed blocks, one canonical encoding per line
//! node-<i>/store/         content store (blobs and holder registry)
//! ```
//!
//! so a single surviving directory is enough to rebuild the chain and serve
//! every stored blob.

mod bft;
mod pow;
mod replica;

use std::fs::OpenOptions;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::ConsensusError;
use crate::crypto::Digest;
use crate::ledger::{
    canonical_bytes, read_chain_dump, Block, ChainConfig, ChainState, LedgerError, Transaction,
};
use crate::store::{ContentId, ContentStore, StoreError};

pub use bft::{BftCluster, ClusterConfig};
pub use pow::PowNode;
pub use replica::ReplicaNode;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("this node is read-only")]
    ReadOnly,
    #[error("no live node available")]
    NoLiveNode,
    #[error("consensus made no progress (fewer than two thirds of validators live?)")]
    Stalled,
    #[error("node directory: {0}")]
    Layout(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committed {
    pub tx_id: Digest,
    pub height: u64,
    pub block_hash: Digest,
}

/// What the application layer needs from a ledger deployment.
pub trait LedgerBackend: Send + Sync {
    /// Commits `tx` and returns where it landed. Submitting an already
    /// committed transaction returns its existing location.
    fn submit(&self, tx: Transaction) -> Result<Committed, NodeError>;

    /// An immutable view of the committed chain.
    fn snapshot(&self) -> Arc<ChainState>;

    /// Stores a blob on every live node and records them as holders.
    fn put_blob(&self, bytes: &[u8]) -> Result<ContentId, NodeError>;

    fn get_blob(&self, cid: &ContentId) -> Result<Vec<u8>, NodeError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub node_id: String,
    pub chain: ChainConfig,
}

pub const NODE_META: &str = "node.json";
pub const CHAIN_FILE: &str = "chain.ndjson";
pub const STORE_DIR: &str = "store";

pub(crate) fn write_meta(dir: &Path, meta: &NodeMeta) -> Result<(), NodeError> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_vec_pretty(meta).map_err(|e| NodeError::Layout(e.to_string()))?;
    crate::store::atomic_write(&dir.join(NODE_META), &text)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<NodeMeta, NodeError> {
    let path = dir.join(NODE_META);
    let bytes =
        std::fs::read(&path).map_err(|e| NodeError::Layout(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| NodeError::Layout(format!("{}: {e}", path.display())))
}

pub fn read_chain_file(dir: &Path) -> Result<Vec<Block>, NodeError> {
    let path = dir.join(CHAIN_FILE);
    if !path.exists() {
        return Ok(vec![Block::genesis()]);
    }
    let file = std::fs::File::open(path)?;
    Ok(read_chain_dump(BufReader::new(file))?)
}

/// Loads and fully re-validates the chain stored in a node directory.
pub fn load_chain(dir: &Path, config: &ChainConfig) -> Result<ChainState, NodeError> {
    let blocks = read_chain_file(dir)?;
    Ok(ChainState::from_blocks(config.clone(), &blocks)?)
}

pub(crate) fn node_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("node-{i}"))
}

/// Appends blocks to the node's chain file, writing genesis first if the
/// file is new.
pub(crate) fn append_blocks(dir: &Path, blocks: &[Block]) -> Result<(), NodeError> {
    let path = dir.join(CHAIN_FILE);
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut buf = Vec::new();
    if fresh {
        buf.extend(canonical_bytes(&Block::genesis())?);
        buf.push(b'\n');
    }
    for b in blocks {
        buf.extend(canonical_bytes(b)?);
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

pub(crate) fn open_store(dir: Option<&Path>, node_id: &str) -> Result<ContentStore, NodeError> {
    Ok(match dir {
        Some(d) => ContentStore::open(d.join(STORE_DIR), node_id)?,
        None => ContentStore::in_memory(node_id),
    })
}

pub(crate) fn existing_location(chain: &ChainState, tx: &Transaction) -> Option<Committed> {
    chain.tx_location(&tx.id).map(|(height, _)| Committed {
        tx_id: tx.id,
        height,
        block_hash: chain.block_hashes()[height as usize],
    })
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests;
