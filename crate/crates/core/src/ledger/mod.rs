//! CREATE/TRANSFER asset ledger: transactions, blocks, chain state,
//! proof-of-work sealing, fork choice and tamper auditing.

mod audit;
mod block;
pub mod canonical;
mod fork;
mod state;
mod tx;
mod vote;

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::crypto::Digest;

pub use audit::{audit_chain, detect_tamper, verify_chain_dump, BlockStatus, DumpReport};
pub use block::{mine_pow, pow_seal_holds, tx_root, Block, BlockHeader, Seal};
pub use canonical::{canonical_bytes, canonical_encode, compute_tx_id, finite_number, map_of};
pub use fork::ForkOutcome;
pub use state::{
    replay_utxo, ChainConfig, ChainState, ConsensusMode, DEFAULT_MAX_TXS, DEFAULT_POW_BITS,
};
pub use tx::{
    build_create_tx, build_create_tx_for, build_transfer_tx, Asset, Input, Operation, Output,
    OutputRef, Transaction, TX_VERSION,
};
pub use vote::{is_quorum, sign_vote, vote_signing_bytes, CommitCertificate, Precommit, VoteKind};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TxRejection {
    #[error("malformed: {0}")]
    Malformed(&'static str),
    #[error("id does not match the canonical body")]
    IdMismatch,
    #[error("already committed")]
    AlreadyCommitted,
    #[error("spent output does not exist")]
    UnknownOutput,
    #[error("output already spent")]
    AlreadySpent,
    #[error("a pending transaction already spends this output")]
    PendingConflict,
    #[error("input owner does not own the spent output")]
    NotOwner,
    #[error("spent output belongs to a different asset")]
    LineageMismatch,
    #[error("input signature does not verify")]
    BadSignature,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BlockRejection {
    #[error("genesis block differs from the fixed genesis")]
    Genesis,
    #[error("expected height {expected}, got {got}")]
    Height { expected: u64, got: u64 },
    #[error("prev_hash does not match the tip")]
    Linkage,
    #[error("timestamp earlier than the parent's")]
    Timestamp,
    #[error("{0} transactions exceed the block capacity")]
    TooManyTxs(usize),
    #[error("tx_root does not match the transactions")]
    TxRoot,
    #[error("seal: {0}")]
    Seal(&'static str),
    #[error("transaction {0}: {1}")]
    Tx(usize, TxRejection),
    #[error("transaction {0} repeats an id or output spent earlier in the block")]
    IntraBlockConflict(usize),
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction {id} rejected: {reason}")]
    TxRejected { id: Digest, reason: TxRejection },
    #[error("block at height {height} rejected: {reason}")]
    BlockRejected { height: u64, reason: BlockRejection },
    #[error("candidate chain does not fork from the local chain")]
    UnknownAncestor,
    #[error("committed blocks are final; the candidate would replace one")]
    ReorgForbidden,
    #[error("number {0} cannot be encoded")]
    NonFinite(f64),
    #[error("encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes one canonical block encoding per line; line i holds height i.
pub fn write_chain_dump<W: Write>(blocks: &[Block], mut out: W) -> Result<(), LedgerError> {
    for b in blocks {
        out.write_all(&canonical_bytes(b)?)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_chain_dump<R: BufRead>(input: R) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let b: Block = serde_json::from_str(&line)
            .map_err(|e| LedgerError::Encoding(format!("line {}: {e}", n + 1)))?;
        blocks.push(b);
    }
    Ok(blocks)
}
