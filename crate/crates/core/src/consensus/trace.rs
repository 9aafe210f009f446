//! Newline-delimited trace records and the offline checker that replays them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::message::ConsensusMessage;
use super::node::{Behavior, Evidence, Step};
use super::sim::NetworkConfig;
use super::ConsensusError;
use crate::crypto::{Digest, PublicKey, VerifyCache};
use crate::ledger::{Block, ChainConfig, ChainState, VoteKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSummary {
    pub kind: VoteKind,
    pub height: u64,
    pub round: u32,
    pub block_hash: Option<Digest>,
    pub sender: Option<usize>,
}

impl MessageSummary {
    pub fn of(msg: &ConsensusMessage, sender: Option<usize>) -> Self {
        Self {
            kind: msg.kind,
            height: msg.height,
            round: msg.round,
            block_hash: msg.block_hash,
            sender,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Header {
        config: NetworkConfig,
        validators: Vec<PublicKey>,
        byzantine_bound_exceeded: bool,
    },
    Deliver {
        t: u64,
        from: usize,
        to: usize,
        msg: MessageSummary,
    },
    Drop {
        t: u64,
        from: usize,
        to: usize,
        kind: VoteKind,
        reason: String,
    },
    Timeout {
        t: u64,
        node: usize,
        height: u64,
        round: u32,
        step: Step,
    },
    Commit {
        t: u64,
        node: usize,
        height: u64,
        block: Box<Block>,
    },
    Evidence {
        t: u64,
        node: usize,
        evidence: Evidence,
    },
    InvalidSignature {
        t: u64,
        node: usize,
        from: Option<usize>,
    },
    Crash {
        t: u64,
        node: usize,
    },
    End {
        t: u64,
        heights: Vec<u64>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, ConsensusError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line)
                .map_err(|e| ConsensusError::Trace(format!("line {}: {e}", i + 1)))?;
            events.push(e);
        }
        Ok(Self { events })
    }

    pub fn header(&self) -> Option<(&NetworkConfig, &[PublicKey])> {
        match self.events.first() {
            Some(TraceEvent::Header {
                config, validators, ..
            }) => Some((config, validators)),
            _ => None,
        }
    }

    /// (event index, node, block) for every commit in order.
    pub fn commits(&self) -> impl Iterator<Item = (usize, usize, &Block)> {
        self.events.iter().enumerate().filter_map(|(i, e)| match e {
            TraceEvent::Commit { node, block, .. } => Some((i, *node, block.as_ref())),
            _ => None,
        })
    }

    pub fn evidence_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Evidence { .. }))
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    Safety,
    Finality,
    Validity,
    CertificateSoundness,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Safety => "Safety",
            Property::Finality => "Finality",
            Property::Validity => "Validity",
            Property::CertificateSoundness => "Certificate soundness",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub property: Property,
    /// Index into `Trace::events` of the offending commit.
    pub event: usize,
    pub node: usize,
    pub height: u64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at event {} (node {}, height {}): {}",
            self.property, self.event, self.node, self.height, self.detail
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub commits_checked: usize,
    pub violation: Option<Violation>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Replays every commit in the trace and reports the first broken property.
///
/// Certificates are checked for every node. Safety, finality and validity
/// are checked for honest nodes only; an equivocating node's own view is
/// not constrained.
pub fn check_trace(trace: &Trace) -> Result<Verdict, ConsensusError> {
    let (config, validators) = trace
        .header()
        .ok_or_else(|| ConsensusError::Trace("trace does not start with a header".into()))?;
    let cache = Arc::new(VerifyCache::new());
    let chain_config = ChainConfig {
        max_txs: config.max_txs,
        ..ChainConfig::bft(validators.to_vec())
    };
    let mut chains: BTreeMap<usize, ChainState> = BTreeMap::new();
    let mut decided: BTreeMap<u64, (usize, Digest)> = BTreeMap::new();
    let mut checked = 0;

    for (event, node, block) in trace.commits() {
        let height = block.height();
        let fail = move |property, detail: String| {
            Ok(Verdict {
                commits_checked: checked,
                violation: Some(Violation {
                    property,
                    event,
                    node,
                    height,
                    detail,
                }),
            })
        };
        if node >= validators.len() {
            return fail(Property::Validity, "commit from an unknown node".into());
        }
        let hash = block.hash();
        match &block.commit {
            None => return fail(Property::CertificateSoundness, "no certificate".into()),
            Some(cert) => {
                if cert.height != height || cert.block_hash != hash {
                    return fail(
                        Property::CertificateSoundness,
                        "certificate names a different block".into(),
                    );
                }
                if let Err(e) = cert.verify(validators, Some(&cache)) {
                    return fail(Property::CertificateSoundness, e.into());
                }
            }
        }
        checked += 1;
        if config.behavior(node) != Behavior::Honest {
            continue;
        }

        let chain = chains.entry(node).or_insert_with(|| {
            ChainState::new(chain_config.clone()).with_verify_cache(cache.clone())
        });
        if height <= chain.height() {
            return fail(
                Property::Finality,
                format!("node already committed height {}", chain.height()),
            );
        }
        if let Some((first, h)) = decided.get(&height) {
            if *h != hash {
                return fail(
                    Property::Safety,
                    format!("node {first} committed {h} but this node committed {hash}"),
                );
            }
        } else {
            decided.insert(height, (node, hash));
        }
        if let Err(e) = chain.apply_block(block.clone()) {
            return fail(Property::Validity, e.to_string());
        }
    }
    Ok(Verdict {
        commits_checked: checked,
        violation: None,
    })
}
