use crate::crypto::Digest;

use super::block::Block;
use super::state::{ChainState, ConsensusMode};
use super::LedgerError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForkOutcome {
    pub adopted: bool,
    /// Local blocks abandoned by the switch.
    pub reorg_depth: u64,
    /// Transactions from abandoned blocks that validated again and are back in pending.
    pub returned_to_pending: Vec<Digest>,
}

impl ChainState {
    /// Considers a competing chain given as the blocks after some common
    /// ancestor. In proof-of-work mode the candidate replaces the local
    /// suffix only when its cumulative work is strictly larger; equal work
    /// keeps what was seen first. A committed BFT chain is final, so there
    /// the candidate may only extend the tip.
    pub fn fork_choice(&mut self, candidate: &[Block]) -> Result<ForkOutcome, LedgerError> {
        let Some(first) = candidate.first() else {
            return Ok(ForkOutcome::default());
        };
        let ancestor = first
            .header
            .height
            .checked_sub(1)
            .ok_or(LedgerError::UnknownAncestor)?;
        if self.block_hashes().get(ancestor as usize) != Some(&first.header.prev_hash) {
            return Err(LedgerError::UnknownAncestor);
        }

        if matches!(self.config().mode, ConsensusMode::Bft { .. }) {
            if ancestor != self.height() {
                return Err(LedgerError::ReorgForbidden);
            }
            let mut next = self.clone();
            for b in candidate {
                next.apply_block(b.clone())?;
            }
            *self = next;
            return Ok(ForkOutcome {
                adopted: true,
                ..Default::default()
            });
        }

        let mut next = self.truncated(ancestor);
        for b in candidate {
            next.apply_block(b.clone())?;
        }
        if next.cumulative_work() <= self.cumulative_work() {
            return Ok(ForkOutcome::default());
        }

        let abandoned: Vec<Block> = self.blocks()[ancestor as usize + 1..].to_vec();
        let old_pending = self.take_pending();
        let mut returned = Vec::new();
        for tx in abandoned.into_iter().flat_map(|b| b.txs) {
            let id = tx.id;
            if let Ok(true) = next.append_pending(tx) {
                returned.push(id);
            }
        }
        for tx in old_pending {
            let _ = next.append_pending(tx);
        }
        let depth = self.height() - ancestor;
        *self = next;
        Ok(ForkOutcome {
            adopted: true,
            reorg_depth: depth,
            returned_to_pending: returned,
        })
    }
}
