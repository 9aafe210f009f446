use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{
    append_blocks, existing_location, load_chain, node_dir, open_store, write_meta, Committed,
    LedgerBackend, NodeError, NodeMeta, CHAIN_FILE,
};
use crate::consensus::{Behavior, LocalNet, NetworkConfig, Node};
use crate::crypto::{PublicKey, VerifyCache};
use crate::ledger::{ChainConfig, ChainState, Transaction, DEFAULT_MAX_TXS};
use crate::store::{ContentId, ContentStore};

const CLUSTER_FILE: &str = "cluster.json";
const STEP_LIMIT: usize = 1_000_000;
const ROUND_LIMIT: u32 = 40;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub nodes: usize,
    pub block_time_ms: u64,
    pub max_txs: usize,
    /// Validator keys are derived from this seed.
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            block_time_ms: 100,
            max_txs: DEFAULT_MAX_TXS,
            seed: 0,
        }
    }
}

struct Inner {
    net: LocalNet,
    started: bool,
    persisted: Vec<u64>,
}

impl Inner {
    fn live(&self) -> Vec<usize> {
        (0..self.net.nodes.len())
            .filter(|&i| !self.net.crashed[i])
            .collect()
    }
}

/// N validators running the BFT engine in-process over a lossless local
/// network. Each submission drives consensus until the transaction is
/// committed on every live node.
pub struct BftCluster {
    root: Option<PathBuf>,
    config: ClusterConfig,
    validators: Vec<PublicKey>,
    inner: Mutex<Inner>,
    stores: Vec<ContentStore>,
    snapshot: RwLock<Arc<ChainState>>,
}

impl BftCluster {
    pub fn in_memory(config: ClusterConfig) -> Result<Self, NodeError> {
        Self::build(None, config)
    }

    /// Opens the cluster under `root`, resuming every node from its chain
    /// file. An existing `cluster.json` takes precedence over `config`.
    pub fn open(root: &Path, config: ClusterConfig) -> Result<Self, NodeError> {
        std::fs::create_dir_all(root)?;
        let path = root.join(CLUSTER_FILE);
        let config = if path.exists() {
            serde_json::from_slice(&std::fs::read(&path)?)
                .map_err(|e| NodeError::Layout(format!("{}: {e}", path.display())))?
        } else {
            let text =
                serde_json::to_vec_pretty(&config).map_err(|e| NodeError::Layout(e.to_string()))?;
            crate::store::atomic_write(&path, &text)?;
            config
        };
        Self::build(Some(root.to_path_buf()), config)
    }

    fn build(root: Option<PathBuf>, config: ClusterConfig) -> Result<Self, NodeError> {
        if config.nodes == 0 || config.nodes > 128 {
            return Err(NodeError::Layout(format!(
                "cluster size {} outside 1..=128",
                config.nodes
            )));
        }
        let keys = NetworkConfig::new(config.nodes, config.seed).validator_keys();
        let validators: Vec<PublicKey> = keys.iter().map(|k| k.public()).collect();
        let shared = Arc::new(validators.clone());
        let chain_config = ChainConfig {
            max_txs: config.max_txs,
            ..ChainConfig::bft(validators.clone())
        };
        let cache = Arc::new(VerifyCache::new());
        let ids: Vec<String> = (0..config.nodes).map(|i| format!("node-{i}")).collect();

        let mut nodes = Vec::new();
        let mut stores = Vec::new();
        let mut persisted = Vec::new();
        for (i, key) in keys.into_iter().enumerate() {
            let dir = root.as_ref().map(|r| node_dir(r, i));
            let chain = match &dir {
                Some(d) => {
                    write_meta(
                        d,
                        &NodeMeta {
                            node_id: ids[i].clone(),
                            chain: chain_config.clone(),
                        },
                    )?;
                    let chain = load_chain(d, &chain_config)?;
                    persisted.push(if d.join(CHAIN_FILE).exists() {
                        chain.height()
                    } else {
                        0
                    });
                    chain
                }
                None => {
                    persisted.push(0);
                    ChainState::new(chain_config.clone())
                }
            };
            let store = open_store(dir.as_deref(), &ids[i])?;
            for id in &ids {
                store.register_node(id)?;
            }
            stores.push(store);
            nodes.push(Node::with_chain(
                i,
                key,
                shared.clone(),
                Behavior::Honest,
                config.block_time_ms,
                chain,
                cache.clone(),
            ));
        }
        let snapshot = Arc::new(nodes[0].chain().clone());
        Ok(Self {
            root,
            config,
            validators,
            inner: Mutex::new(Inner {
                net: LocalNet::new(nodes),
                started: false,
                persisted,
            }),
            stores,
            snapshot: RwLock::new(snapshot),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn validators(&self) -> &[PublicKey] {
        &self.validators
    }

    /// Stops node `i` from processing anything further.
    pub fn crash(&self, i: usize) {
        self.inner.lock().expect("cluster lock").net.crash(i);
    }

    pub fn node_chain(&self, i: usize) -> ChainState {
        self.inner.lock().expect("cluster lock").net.nodes[i]
            .chain()
            .clone()
    }

    pub fn store(&self, i: usize) -> &ContentStore {
        &self.stores[i]
    }

    fn persist(&self, inner: &mut Inner) -> Result<(), NodeError> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        for i in 0..inner.net.nodes.len() {
            let chain = inner.net.nodes[i].chain();
            let done = inner.persisted[i];
            if chain.height() > done {
                append_blocks(&node_dir(root, i), &chain.blocks()[done as usize + 1..])?;
                inner.persisted[i] = chain.height();
            } else if done == 0 && !node_dir(root, i).join(CHAIN_FILE).exists() {
                append_blocks(&node_dir(root, i), &[])?;
            }
        }
        Ok(())
    }

    fn refresh_snapshot(&self, inner: &Inner) {
        if let Some(&i) = inner.live().first() {
            *self.snapshot.write().expect("snapshot lock") =
                Arc::new(inner.net.nodes[i].chain().clone());
        }
    }
}

impl LedgerBackend for BftCluster {
    fn submit(&self, tx: Transaction) -> Result<Committed, NodeError> {
        let mut inner = self.inner.lock().expect("cluster lock");
        let live = inner.live();
        let first = *live.first().ok_or(NodeError::NoLiveNode)?;
        if let Some(c) = existing_location(inner.net.nodes[first].chain(), &tx) {
            return Ok(c);
        }
        inner.net.nodes[first].submit(tx.clone())?;
        for &i in &live[1..] {
            if let Err(e) = inner.net.nodes[i].submit(tx.clone()) {
                log::warn!("node {i} did not accept {}: {e}", tx.id);
            }
        }
        if !inner.started {
            inner.net.start();
            inner.started = true;
        }
        let id = tx.id;
        inner.net.run_until(STEP_LIMIT, |net| {
            live.iter().all(|&i| net.nodes[i].chain().is_committed(&id))
                || live.iter().any(|&i| net.nodes[i].round() > ROUND_LIMIT)
        });
        self.persist(&mut inner)?;
        self.refresh_snapshot(&inner);
        existing_location(inner.net.nodes[first].chain(), &tx).ok_or(NodeError::Stalled)
    }

    fn snapshot(&self) -> Arc<ChainState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn put_blob(&self, bytes: &[u8]) -> Result<ContentId, NodeError> {
        let live = self.inner.lock().expect("cluster lock").live();
        if live.is_empty() {
            return Err(NodeError::NoLiveNode);
        }
        let mut cid = None;
        for &i in &live {
            cid = Some(self.stores[i].put(bytes)?);
        }
        let cid = cid.expect("at least one live node");
        for &i in &live {
            for &j in &live {
                self.stores[i].announce(&cid, self.stores[j].node_id())?;
            }
        }
        Ok(cid)
    }

    fn get_blob(&self, cid: &ContentId) -> Result<Vec<u8>, NodeError> {
        let live = self.inner.lock().expect("cluster lock").live();
        let mut last = NodeError::NoLiveNode;
        for i in live {
            match self.stores[i].get(cid) {
                Ok(b) => return Ok(b),
                Err(e) => last = e.into(),
            }
        }
        Err(last)
    }
}
