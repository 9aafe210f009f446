use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::block::{pow_seal_holds, tx_root, Block, Seal};
use super::tx::{Asset, Operation, OutputRef, Transaction, TX_VERSION};
use super::{BlockRejection, LedgerError, TxRejection};
use crate::crypto::{verify, Digest, PublicKey, VerifyCache};

pub const DEFAULT_MAX_TXS: usize = 100;
pub const DEFAULT_POW_BITS: u32 = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ConsensusMode {
    Pow { min_difficulty_bits: u32 },
    Bft { validators: Vec<PublicKey> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(flatten)]
    pub mode: ConsensusMode,
    pub max_txs: usize,
}

impl ChainConfig {
    pub fn pow(min_difficulty_bits: u32) -> Self {
        Self {
            mode: ConsensusMode::Pow {
                min_difficulty_bits,
            },
            max_txs: DEFAULT_MAX_TXS,
        }
    }

    pub fn bft(validators: Vec<PublicKey>) -> Self {
        Self {
            mode: ConsensusMode::Bft { validators },
            max_txs: DEFAULT_MAX_TXS,
        }
    }

    pub fn validators(&self) -> &[PublicKey] {
        match &self.mode {
            ConsensusMode::Bft { validators } => validators,
            ConsensusMode::Pow { .. } => &[],
        }
    }

    /// Round-robin proposer for (height, round).
    pub fn proposer(&self, height: u64, round: u32) -> Option<PublicKey> {
        let v = self.validators();
        if v.is_empty() {
            return None;
        }
        Some(v[((height + round as u64) % v.len() as u64) as usize])
    }
}

/// Committed chain, the unspent-output index derived from it, and this
/// node's pending list.
#[derive(Clone, Debug)]
pub struct ChainState {
    config: ChainConfig,
    blocks: Vec<Block>,
    hashes: Vec<Digest>,
    utxo: BTreeMap<OutputRef, PublicKey>,
    tx_locations: HashMap<Digest, (u64, usize)>,
    asset_of: HashMap<Digest, Digest>,
    lineage: HashMap<Digest, Vec<Digest>>,
    pending: Vec<Transaction>,
    pending_spends: HashMap<OutputRef, Digest>,
    cumulative_work: u128,
    cache: Option<Arc<VerifyCache>>,
}

impl ChainState {
    pub fn new(config: ChainConfig) -> Self {
        let genesis = Block::genesis();
        Self {
            config,
            hashes: vec![genesis.hash()],
            blocks: vec![genesis],
            utxo: BTreeMap::new(),
            tx_locations: HashMap::new(),
            asset_of: HashMap::new(),
            lineage: HashMap::new(),
            pending: Vec::new(),
            pending_spends: HashMap::new(),
            cumulative_work: 0,
            cache: None,
        }
    }

    pub fn with_verify_cache(mut self, cache: Arc<VerifyCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Rebuilds a state by validating and applying `blocks` from genesis.
    pub fn from_blocks(config: ChainConfig, blocks: &[Block]) -> Result<Self, LedgerError> {
        let mut state = Self::new(config);
        match blocks.first() {
            Some(g) if *g == state.blocks[0] => {}
            _ => {
                return Err(LedgerError::BlockRejected {
                    height: 0,
                    reason: BlockRejection::Genesis,
                })
            }
        }
        for b in &blocks[1..] {
            state.apply_block(b.clone())?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_hashes(&self) -> &[Digest] {
        &self.hashes
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_hash(&self) -> Digest {
        *self.hashes.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height()
    }

    pub fn utxo(&self) -> &BTreeMap<OutputRef, PublicKey> {
        &self.utxo
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn cumulative_work(&self) -> u128 {
        self.cumulative_work
    }

    pub fn is_committed(&self, tx_id: &Digest) -> bool {
        self.tx_locations.contains_key(tx_id)
    }

    pub fn tx_location(&self, tx_id: &Digest) -> Option<(u64, usize)> {
        self.tx_locations.get(tx_id).copied()
    }

    pub fn transaction(&self, tx_id: &Digest) -> Option<&Transaction> {
        let (h, i) = self.tx_location(tx_id)?;
        self.blocks.get(h as usize)?.txs.get(i)
    }

    fn sig_ok(&self, owner: &PublicKey, msg: &[u8], sig: &crate::crypto::Signature) -> bool {
        match &self.cache {
            Some(c) => c.verify(owner, msg, sig),
            None => verify(owner, msg, sig),
        }
    }

    /// Full check against the committed outputs and, when `with_pending`,
    /// against outputs already claimed by other pending transactions.
    fn check_tx(&self, tx: &Transaction, with_pending: bool) -> Result<(), TxRejection> {
        if tx.version != TX_VERSION {
            return Err(TxRejection::Malformed("unsupported version"));
        }
        if tx.inputs.len() != 1 || tx.outputs.len() != 1 {
            return Err(TxRejection::Malformed(
                "exactly one input and one output required",
            ));
        }
        if tx.compute_id() != tx.id {
            return Err(TxRejection::IdMismatch);
        }
        if self.is_committed(&tx.id) {
            return Err(TxRejection::AlreadyCommitted);
        }
        let input = &tx.inputs[0];
        let sig = input
            .signature
            .as_ref()
            .ok_or(TxRejection::Malformed("unsigned input"))?;
        match (tx.operation, &tx.asset, &input.fulfills) {
            (Operation::Create, Asset::Data(_), None) => {}
            (Operation::Transfer, Asset::Id(root), Some(spent)) => {
                let Some(owner) = self.utxo.get(spent) else {
                    return Err(if self.is_committed(&spent.transaction_id) {
                        TxRejection::AlreadySpent
                    } else {
                        TxRejection::UnknownOutput
                    });
                };
                if *owner != input.owner {
                    return Err(TxRejection::NotOwner);
                }
                if self.asset_of.get(&spent.transaction_id) != Some(root) {
                    return Err(TxRejection::LineageMismatch);
                }
                if with_pending {
                    if let Some(other) = self.pending_spends.get(spent) {
                        if *other != tx.id {
                            return Err(TxRejection::PendingConflict);
                        }
                    }
                }
            }
            _ => {
                return Err(TxRejection::Malformed(
                    "operation, asset and input disagree",
                ))
            }
        }
        if !self.sig_ok(&input.owner, &tx.signing_bytes(), sig) {
            return Err(TxRejection::BadSignature);
        }
        Ok(())
    }

    pub fn check_transaction(&self, tx: &Transaction) -> Result<(), TxRejection> {
        self.check_tx(tx, true)
    }

    /// The total validation predicate: never panics, whatever `tx` holds.
    pub fn validate_transaction(&self, tx: &Transaction) -> bool {
        self.check_transaction(tx).is_ok()
    }

    /// Appends a valid transaction once. Re-appending a pending id is a no-op.
    pub fn append_pending(&mut self, tx: Transaction) -> Result<bool, LedgerError> {
        if self.pending.iter().any(|p| p.id == tx.id) {
            return Ok(false);
        }
        self.check_transaction(&tx)
            .map_err(|reason| LedgerError::TxRejected { id: tx.id, reason })?;
        for r in tx.spent() {
            self.pending_spends.insert(*r, tx.id);
        }
        self.pending.push(tx);
        Ok(true)
    }

    /// Takes up to `max_txs` pending transactions in FIFO order, skipping any
    /// that no longer validate or that conflict with one already taken.
    /// Pending is left untouched; commit removes what was included.
    pub fn form_block(&self, max_txs: usize, timestamp: u64, seal: Seal) -> Block {
        let mut taken: Vec<Transaction> = Vec::new();
        let mut spends = HashSet::new();
        for tx in &self.pending {
            if taken.len() >= max_txs {
                break;
            }
            if self.check_tx(tx, false).is_err() || tx.spent().any(|r| spends.contains(r)) {
                continue;
            }
            spends.extend(tx.spent().copied());
            taken.push(tx.clone());
        }
        Block {
            header: super::block::BlockHeader {
                height: self.height() + 1,
                prev_hash: self.tip_hash(),
                tx_root: tx_root(&taken),
                timestamp: timestamp.max(self.tip().header.timestamp),
                seal,
            },
            txs: taken,
            commit: None,
        }
    }

    /// Everything except the commit certificate: used for BFT proposals,
    /// which are voted on before any certificate exists.
    pub fn check_block_body(&self, block: &Block) -> Result<(), BlockRejection> {
        let h = &block.header;
        if h.height != self.height() + 1 {
            return Err(BlockRejection::Height {
                expected: self.height() + 1,
                got: h.height,
            });
        }
        if h.prev_hash != self.tip_hash() {
            return Err(BlockRejection::Linkage);
        }
        if h.timestamp < self.tip().header.timestamp {
            return Err(BlockRejection::Timestamp);
        }
        if block.txs.len() > self.config.max_txs {
            return Err(BlockRejection::TooManyTxs(block.txs.len()));
        }
        if h.tx_root != tx_root(&block.txs) {
            return Err(BlockRejection::TxRoot);
        }
        match (&self.config.mode, &h.seal) {
            (
                ConsensusMode::Pow {
                    min_difficulty_bits,
                },
                Seal::Pow {
                    difficulty_bits, ..
                },
            ) => {
                if difficulty_bits < min_difficulty_bits {
                    return Err(BlockRejection::Seal(
                        "difficulty below the configured minimum",
                    ));
                }
                if !pow_seal_holds(h) {
                    return Err(BlockRejection::Seal(
                        "proof of work does not meet its target",
                    ));
                }
            }
            (ConsensusMode::Bft { .. }, Seal::Bft { proposer, round }) => {
                if self.config.proposer(h.height, *round) != Some(*proposer) {
                    return Err(BlockRejection::Seal(
                        "proposer is not scheduled for this round",
                    ));
                }
            }
            _ => {
                return Err(BlockRejection::Seal(
                    "seal kind does not match the consensus mode",
                ))
            }
        }
        let mut spends = HashSet::new();
        let mut ids = HashSet::new();
        for (i, tx) in block.txs.iter().enumerate() {
            self.check_tx(tx, false)
                .map_err(|r| BlockRejection::Tx(i, r))?;
            if !ids.insert(tx.id) || tx.spent().any(|r| !spends.insert(*r)) {
                return Err(BlockRejection::IntraBlockConflict(i));
            }
        }
        Ok(())
    }

    pub fn check_block(&self, block: &Block) -> Result<(), BlockRejection> {
        self.check_block_body(block)?;
        // The certificate round may be later than the seal round: a locked
        // block can be re-proposed and committed in a subsequent round.
        if let Seal::Bft { .. } = block.header.seal {
            let cert = block
                .commit
                .as_ref()
                .ok_or(BlockRejection::Seal("missing commit certificate"))?;
            if cert.height != block.header.height
                || cert.round < seal_round(&block.header.seal)
                || cert.block_hash != block.hash()
            {
                return Err(BlockRejection::Seal("certificate is for a different block"));
            }
            cert.verify(self.config.validators(), self.cache.as_deref())
                .map_err(BlockRejection::Seal)?;
        }
        Ok(())
    }

    pub fn validate_block(&self, block: &Block) -> bool {
        self.check_block(block).is_ok()
    }

    pub fn apply_block(&mut self, block: Block) -> Result<(), LedgerError> {
        self.check_block(&block)
            .map_err(|reason| LedgerError::BlockRejected {
                height: block.header.height,
                reason,
            })?;
        self.apply_unchecked(block);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&mut self, block: Block) {
        let height = block.header.height;
        for (i, tx) in block.txs.iter().enumerate() {
            for r in tx.spent() {
                self.utxo.remove(r);
            }
            for (j, out) in tx.outputs.iter().enumerate() {
                self.utxo.insert(tx.output_ref(j as u32), out.owner);
            }
            let asset = tx.asset_id();
            self.tx_locations.insert(tx.id, (height, i));
            self.asset_of.insert(tx.id, asset);
            self.lineage.entry(asset).or_default().push(tx.id);
        }
        self.cumulative_work += block.work();
        self.hashes.push(block.hash());
        self.blocks.push(block);
        self.prune_pending();
    }

    /// Drops pending transactions that are now committed or whose spent
    /// output is gone.
    fn prune_pending(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        self.pending_spends.clear();
        for tx in pending {
            if self.is_committed(&tx.id) || tx.spent().any(|r| !self.utxo.contains_key(r)) {
                continue;
            }
            for r in tx.spent() {
                self.pending_spends.insert(*r, tx.id);
            }
            self.pending.push(tx);
        }
    }

    /// A copy holding only blocks `0..=height` and an empty pending list.
    pub(crate) fn truncated(&self, height: u64) -> Self {
        let mut s = Self::new(self.config.clone());
        s.cache = self.cache.clone();
        for b in &self.blocks[1..=height as usize] {
            s.apply_unchecked(b.clone());
        }
        s
    }

    pub(crate) fn take_pending(&mut self) -> Vec<Transaction> {
        self.pending_spends.clear();
        std::mem::take(&mut self.pending)
    }

    /// Assets whose current unspent output is owned by `owner`, oldest first.
    pub fn get_assets_by_public_key(&self, owner: &PublicKey) -> Vec<Digest> {
        let mut out: Vec<Digest> = self
            .utxo
            .iter()
            .filter(|(_, o)| *o == owner)
            .filter_map(|(r, _)| self.asset_of.get(&r.transaction_id).copied())
            .collect();
        out.sort_by_key(|a| self.tx_location(a));
        out.dedup();
        out
    }

    /// The CREATE followed by every TRANSFER, in commit order.
    pub fn get_asset_history(&self, asset: &Digest) -> Vec<&Transaction> {
        self.lineage
            .get(asset)
            .map(|ids| ids.iter().filter_map(|id| self.transaction(id)).collect())
            .unwrap_or_default()
    }

    /// The unspent terminal output of an asset lineage.
    pub fn current_output(&self, asset: &Digest) -> Option<(OutputRef, PublicKey)> {
        let last = self.lineage.get(asset)?.last()?;
        let r = OutputRef {
            transaction_id: *last,
            output_index: 0,
        };
        self.utxo.get(&r).map(|o| (r, *o))
    }
}

fn seal_round(seal: &Seal) -> u32 {
    match seal {
        Seal::Bft { round, .. } => *round,
        _ => 0,
    }
}

/// Recomputes the unspent-output map from scratch, trusting nothing cached.
pub fn replay_utxo(blocks: &[Block]) -> BTreeMap<OutputRef, PublicKey> {
    let mut utxo = BTreeMap::new();
    for b in blocks {
        for tx in &b.txs {
            for r in tx.spent() {
                utxo.remove(r);
            }
            for (j, out) in tx.outputs.iter().enumerate() {
                utxo.insert(tx.output_ref(j as u32), out.owner);
            }
        }
    }
    utxo
}
