//! Signed consensus votes and the commit certificates built from them.
//!
//! These live beside the block types because a BFT-sealed block carries its
//! certificate, and block validation has to check it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::canonical::canonical_encode;
use crate::crypto::{Digest, PublicKey, Signature, SigningKeyPair, VerifyCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteKind {
    #[serde(rename = "PROPOSAL")]
    Proposal,
    #[serde(rename = "PREVOTE")]
    Prevote,
    #[serde(rename = "PRECOMMIT")]
    Precommit,
}

impl VoteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VoteKind::Proposal => "PROPOSAL",
            VoteKind::Prevote => "PREVOTE",
            VoteKind::Precommit => "PRECOMMIT",
        }
    }
}

pub fn vote_signing_bytes(
    kind: VoteKind,
    height: u64,
    round: u32,
    block_hash: Option<&Digest>,
) -> Vec<u8> {
    canonical_encode(&json!({
        "block_hash": block_hash.map(|h| h.to_hex()),
        "height": height,
        "kind": kind.as_str(),
        "round": round,
    }))
}

pub fn sign_vote(
    key: &SigningKeyPair,
    kind: VoteKind,
    height: u64,
    round: u32,
    block_hash: Option<&Digest>,
) -> Signature {
    key.sign(&vote_signing_bytes(kind, height, round, block_hash))
}

/// Strictly more than two thirds of `n`.
pub fn is_quorum(count: usize, n: usize) -> bool {
    count * 3 > 2 * n
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Precommit {
    pub validator: PublicKey,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitCertificate {
    pub height: u64,
    pub round: u32,
    pub block_hash: Digest,
    pub precommits: Vec<Precommit>,
}

impl CommitCertificate {
    /// Checks that distinct members of `validators` contributed valid
    /// PRECOMMIT signatures for this (height, round, hash), and that they
    /// form a quorum. Unknown signers, duplicates and bad signatures are errors.
    pub fn verify(
        &self,
        validators: &[PublicKey],
        cache: Option<&VerifyCache>,
    ) -> Result<(), &'static str> {
        let msg = vote_signing_bytes(
            VoteKind::Precommit,
            self.height,
            self.round,
            Some(&self.block_hash),
        );
        let mut signers = BTreeSet::new();
        for pc in &self.precommits {
            if !validators.contains(&pc.validator) {
                return Err("certificate signer is not a validator");
            }
            if !signers.insert(pc.validator) {
                return Err("duplicate signer in certificate");
            }
            let ok = match cache {
                Some(c) => c.verify(&pc.validator, &msg, &pc.signature),
                None => crate::crypto::verify(&pc.validator, &msg, &pc.signature),
            };
            if !ok {
                return Err("bad precommit signature in certificate");
            }
        }
        if !is_quorum(signers.len(), validators.len()) {
            return Err("certificate lacks a two-thirds quorum");
        }
        Ok(())
    }
}
