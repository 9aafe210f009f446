use std::fmt;

use serde::Serialize;

use super::block::Block;
use super::state::{ChainConfig, ChainState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum BlockStatus {
    Valid,
    /// This block itself fails: bad link to its parent, bad tx_root, bad
    /// seal, or an invalid transaction.
    Broken(String),
    /// Intact on its own, but some ancestor is broken, so it cannot be
    /// validated against any trustworthy state.
    Unanchored,
}

impl BlockStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, BlockStatus::Valid)
    }
}

impl fmt::Display for BlockStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockStatus::Valid => f.write_str("valid"),
            BlockStatus::Broken(r) => write!(f, "broken: {r}"),
            BlockStatus::Unanchored => f.write_str("unanchored"),
        }
    }
}

/// Re-validates a chain from genesis, one status per block.
///
/// The link from each block to its parent is checked against the parent's
/// recomputed content hash, so an edited transaction in block h breaks the
/// link at h + 1 even though h's stored header is unchanged.
pub fn audit_chain(chain: &[Block], config: &ChainConfig) -> Vec<BlockStatus> {
    let mut out = Vec::with_capacity(chain.len());
    let mut state = ChainState::new(config.clone());
    let mut anchored = true;
    for (i, block) in chain.iter().enumerate() {
        let status = if i == 0 {
            if *block == Block::genesis() {
                BlockStatus::Valid
            } else {
                BlockStatus::Broken("genesis block altered".into())
            }
        } else if block.header.prev_hash != chain[i - 1].content_hash() {
            BlockStatus::Broken("prev_hash does not match the parent block".into())
        } else if block.header.height != i as u64 {
            BlockStatus::Broken(format!("height {} at position {i}", block.header.height))
        } else if !anchored {
            BlockStatus::Unanchored
        } else {
            match state.check_block(block) {
                Ok(()) => {
                    state.apply_unchecked(block.clone());
                    BlockStatus::Valid
                }
                Err(e) => BlockStatus::Broken(e.to_string()),
            }
        };
        anchored &= status.is_valid();
        out.push(status);
    }
    out
}

/// Lowest height whose block fails re-validation, if any.
pub fn detect_tamper(chain: &[Block], config: &ChainConfig) -> Option<u64> {
    if chain.is_empty() {
        return Some(0);
    }
    audit_chain(chain, config)
        .iter()
        .position(|s| !s.is_valid())
        .map(|h| h as u64)
}

/// Outcome of re-validating a chain dump line by line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DumpReport {
    /// One entry per non-empty line; line i is expected to hold height i.
    pub statuses: Vec<BlockStatus>,
    pub first_invalid: Option<u64>,
    /// Whether the incrementally maintained unspent set of the valid prefix
    /// equals a from-scratch replay of it.
    pub replay_matches: bool,
}

impl DumpReport {
    pub fn passed(&self) -> bool {
        self.first_invalid.is_none() && self.replay_matches && !self.statuses.is_empty()
    }
}

/// Re-validates a chain dump. Lines that no longer parse as blocks (for
/// instance after a hex edit) count as broken at their height.
pub fn verify_chain_dump<R: std::io::BufRead>(
    input: R,
    config: &ChainConfig,
) -> std::io::Result<DumpReport> {
    let mut parsed: Vec<Result<Block, String>> = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        parsed.push(serde_json::from_str(&line).map_err(|e| format!("unparsable block: {e}")));
    }
    let prefix: Vec<Block> = parsed
        .iter()
        .map_while(|p| p.as_ref().ok().cloned())
        .collect();
    let mut statuses = audit_chain(&prefix, config);
    for p in parsed.iter().skip(prefix.len()) {
        statuses.push(match p {
            Err(e) => BlockStatus::Broken(e.clone()),
            Ok(_) if statuses.iter().all(BlockStatus::is_valid) => {
                BlockStatus::Broken("follows an unparsable block".into())
            }
            Ok(_) => BlockStatus::Unanchored,
        });
    }
    let first_invalid = if statuses.is_empty() {
        Some(0)
    } else {
        statuses
            .iter()
            .position(|s| !s.is_valid())
            .map(|h| h as u64)
    };
    let valid = first_invalid.map_or(prefix.len(), |h| (h as usize).min(prefix.len()));
    let replay_matches = match ChainState::from_blocks(config.clone(), &prefix[..valid]) {
        Ok(state) => *state.utxo() == super::state::replay_utxo(&prefix[..valid]),
        Err(_) => valid == 0,
    };
    Ok(DumpReport {
        statuses,
        first_invalid,
        replay_matches,
    })
}
