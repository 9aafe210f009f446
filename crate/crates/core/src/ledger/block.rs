use serde::{Deserialize, Serialize};

use super::canonical::canonical_bytes;
use super::tx::Transaction;
use super::vote::CommitCertificate;
use crate::crypto::{hash_digest, Digest, PublicKey};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Seal {
    Genesis,
    Pow {
        nonce: u64,
        difficulty_bits: u32,
    },
    /// The certificate itself rides on the block, outside the hashed header.
    Bft {
        proposer: PublicKey,
        round: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub timestamp: u64,
    pub seal: Seal,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest {
        hash_digest(&canonical_bytes(self).expect("header encodes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit: Option<CommitCertificate>,
}

/// Hash over the concatenated transaction ids, in block order. Ids are
/// recomputed from each body rather than read from the `id` field, so the
/// root commits to transaction contents.
pub fn tx_root(txs: &[Transaction]) -> Digest {
    let mut buf = Vec::with_capacity(txs.len() * 32);
    for tx in txs {
        buf.extend_from_slice(&tx.compute_id().0);
    }
    hash_digest(&buf)
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            header: BlockHeader {
                height: 0,
                prev_hash: Digest::ZERO,
                tx_root: tx_root(&[]),
                timestamp: 0,
                seal: Seal::Genesis,
            },
            txs: Vec::new(),
            commit: None,
        }
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    /// Header hash recomputed as if the header committed to the transactions
    /// the block actually carries. Equals [`Block::hash`] for an intact block;
    /// differs as soon as a transaction has been altered after sealing.
    pub fn content_hash(&self) -> Digest {
        let mut h = self.header.clone();
        h.tx_root = tx_root(&self.txs);
        h.hash()
    }

    /// Work contributed to the cumulative-work total.
    pub fn work(&self) -> u128 {
        match self.header.seal {
            Seal::Genesis => 0,
            Seal::Pow {
                difficulty_bits, ..
            } => 1u128 << difficulty_bits.min(127),
            Seal::Bft { .. } => 1,
        }
    }
}

/// Searches nonces from 0 upward until the header hash has at least
/// `difficulty_bits` leading zero bits. Returns the sealed block and the
/// number of hashes tried.
pub fn mine_pow(mut block: Block, difficulty_bits: u32) -> (Block, u64) {
    let mut nonce = 0u64;
    loop {
        block.header.seal = Seal::Pow {
            nonce,
            difficulty_bits,
        };
        if block.header.hash().leading_zero_bits() >= difficulty_bits {
            return (block, nonce + 1);
        }
        nonce += 1;
    }
}

pub fn pow_seal_holds(header: &BlockHeader) -> bool {
    match header.seal {
        Seal::Pow {
            difficulty_bits, ..
        } => header.hash().leading_zero_bits() >= difficulty_bits,
        _ => false,
    }
}
