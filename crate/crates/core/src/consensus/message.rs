use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, Digest, PublicKey, Signature, SigningKeyPair, VerifyCache};
use crate::ledger::{vote_signing_bytes, Block, VoteKind};

/// A signed PROPOSAL, PREVOTE or PRECOMMIT. Proposals carry the block; the
/// signature covers (kind, height, round, block hash) only, and the block
/// must hash to the signed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMessage {
    pub kind: VoteKind,
    pub height: u64,
    pub round: u32,
    pub block_hash: Option<Digest>,
    pub sender: PublicKey,
    pub signature: Signature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Box<Block>>,
}

impl ConsensusMessage {
    pub fn new(
        key: &SigningKeyPair,
        kind: VoteKind,
        height: u64,
        round: u32,
        block_hash: Option<Digest>,
        block: Option<Block>,
    ) -> Self {
        let signature = key.sign(&vote_signing_bytes(
            kind,
            height,
            round,
            block_hash.as_ref(),
        ));
        Self {
            kind,
            height,
            round,
            block_hash,
            sender: key.public(),
            signature,
            block: block.map(Box::new),
        }
    }

    pub fn proposal(key: &SigningKeyPair, height: u64, round: u32, block: Block) -> Self {
        let hash = block.hash();
        Self::new(
            key,
            VoteKind::Proposal,
            height,
            round,
            Some(hash),
            Some(block),
        )
    }

    /// Signature and shape check. A proposal must carry a block whose hash is
    /// the signed hash; votes must not carry a block.
    pub fn is_authentic(&self, cache: &VerifyCache) -> bool {
        let shape = match self.kind {
            VoteKind::Proposal => match (&self.block, &self.block_hash) {
                (Some(b), Some(h)) => b.hash() == *h && b.header.height == self.height,
                _ => false,
            },
            _ => self.block.is_none(),
        };
        shape
            && cache.verify(
                &self.sender,
                &vote_signing_bytes(self.kind, self.height, self.round, self.block_hash.as_ref()),
                &self.signature,
            )
    }

    /// Identity for gossip de-duplication.
    pub fn gossip_id(&self) -> Digest {
        hash_parts(&[&self.sender.0, &self.signature.r, &self.signature.s])
    }
}
