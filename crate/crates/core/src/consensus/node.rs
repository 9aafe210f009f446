//! One validator's round state machine.
//!
//! Heights advance through rounds of propose, prevote and precommit. The
//! proposer for (height, round) is validator `(height + round) mod n`. A node
//! that sees more than two thirds of prevotes for one block (a polka) locks
//! on it and precommits it; more than two thirds of precommits for one block
//! in any round commit it. A locked node prevotes only its locked block in
//! later rounds unless it has seen a polka for a different block in a round
//! after the one it locked in.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::message::ConsensusMessage;
use crate::crypto::{Digest, PublicKey, SigningKeyPair, VerifyCache};
use crate::ledger::{
    is_quorum, Block, ChainConfig, ChainState, CommitCertificate, Precommit, Seal, VoteKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// Waiting out the block time after a commit.
    NewHeight,
    Propose,
    Prevote,
    Precommit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeoutKey {
    pub height: u64,
    pub round: u32,
    pub step: Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// As proposer, sends one block to half the peers and a different block
    /// to the rest; prevotes and precommits every proposal it sees.
    Equivocate,
}

/// Two conflicting signed messages from one validator for the same slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub sender: usize,
    pub height: u64,
    pub round: u32,
    pub kind: VoteKind,
    pub first: Option<Digest>,
    pub second: Option<Digest>,
}

#[derive(Clone, Debug)]
pub enum Action {
    Broadcast(ConsensusMessage),
    Send { to: usize, msg: ConsensusMessage },
    Schedule { key: TimeoutKey, delay_ms: u64 },
    Commit(Box<Block>),
    Evidence(Evidence),
    Invalid { from: Option<usize> },
}

#[derive(Clone, Debug)]
pub enum NodeInput<'a> {
    Start,
    Message(&'a ConsensusMessage),
    Timeout(TimeoutKey),
}

const MAX_BUFFERED_HEIGHTS: u64 = 16;

#[derive(Clone)]
pub struct Node {
    index: usize,
    key: SigningKeyPair,
    validators: Arc<Vec<PublicKey>>,
    behavior: Behavior,
    block_time_ms: u64,
    chain: ChainState,
    cache: Arc<VerifyCache>,

    height: u64,
    round: u32,
    step: Step,
    locked: Option<(u32, Digest)>,
    valid: Option<(u32, Digest)>,

    blocks: BTreeMap<Digest, Block>,
    block_proposals: BTreeMap<Digest, ConsensusMessage>,
    proposals: BTreeMap<u32, ConsensusMessage>,
    votes: BTreeMap<(u32, VoteKind), BTreeMap<usize, ConsensusMessage>>,
    commit_votes: BTreeMap<(u32, Digest), BTreeMap<usize, ConsensusMessage>>,
    round_senders: BTreeMap<u32, BTreeSet<usize>>,
    sent: BTreeSet<(u32, VoteKind, Option<Digest>)>,
    evidence_seen: BTreeSet<(usize, u32, VoteKind)>,

    future: BTreeMap<u64, Vec<ConsensusMessage>>,
    history: BTreeMap<u64, Vec<ConsensusMessage>>,
    caught_up: BTreeSet<(usize, u64, u32)>,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("index", &self.index)
            .field("height", &self.height)
            .field("round", &self.round)
            .field("step", &self.step)
            .field("locked", &self.locked)
            .finish_non_exhaustive()
    }
}

pub fn step_node(node: &mut Node, now: u64, input: NodeInput<'_>) -> Vec<Action> {
    match input {
        NodeInput::Start => node.on_start(now),
        NodeInput::Message(m) => node.on_message(now, m),
        NodeInput::Timeout(k) => node.on_timeout(now, k),
    }
}

impl Node {
    pub fn new(
        index: usize,
        key: SigningKeyPair,
        validators: Arc<Vec<PublicKey>>,
        behavior: Behavior,
        block_time_ms: u64,
        max_txs: usize,
        cache: Arc<VerifyCache>,
    ) -> Self {
        let config = ChainConfig {
            max_txs,
            ..ChainConfig::bft(validators.to_vec())
        };
        let chain = ChainState::new(config);
        Self::with_chain(
            index,
            key,
            validators,
            behavior,
            block_time_ms,
            chain,
            cache,
        )
    }

    /// Resumes from an already committed chain, deciding `chain.height() + 1` next.
    pub fn with_chain(
        index: usize,
        key: SigningKeyPair,
        validators: Arc<Vec<PublicKey>>,
        behavior: Behavior,
        block_time_ms: u64,
        chain: ChainState,
        cache: Arc<VerifyCache>,
    ) -> Self {
        let chain = chain.with_verify_cache(cache.clone());
        Self {
            index,
            key,
            validators,
            behavior,
            block_time_ms,
            height: chain.height() + 1,
            chain,
            cache,
            round: 0,
            step: Step::NewHeight,
            locked: None,
            valid: None,
            blocks: BTreeMap::new(),
            block_proposals: BTreeMap::new(),
            proposals: BTreeMap::new(),
            votes: BTreeMap::new(),
            commit_votes: BTreeMap::new(),
            round_senders: BTreeMap::new(),
            sent: BTreeSet::new(),
            evidence_seen: BTreeSet::new(),
            future: BTreeMap::new(),
            history: BTreeMap::new(),
            caught_up: BTreeSet::new(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn chain_mut(&mut self) -> &mut ChainState {
        &mut self.chain
    }

    /// Height currently being decided (one above the committed tip).
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn locked(&self) -> Option<(u32, Digest)> {
        self.locked
    }

    fn n(&self) -> usize {
        self.validators.len()
    }

    fn index_of(&self, key: &PublicKey) -> Option<usize> {
        self.validators.iter().position(|v| v == key)
    }

    fn timeout(&self, round: u32) -> u64 {
        self.block_time_ms * (2 + round as u64) / 2
    }

    fn schedule(&self, step: Step, delay_ms: u64, out: &mut Vec<Action>) {
        out.push(Action::Schedule {
            key: TimeoutKey {
                height: self.height,
                round: self.round,
                step,
            },
            delay_ms,
        });
    }

    pub fn on_start(&mut self, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        self.start_round(now, 0, &mut out);
        self.evaluate(now, &mut out);
        out
    }

    pub fn on_timeout(&mut self, now: u64, key: TimeoutKey) -> Vec<Action> {
        let mut out = Vec::new();
        if key.height != self.height || key.round != self.round || key.step != self.step {
            return out;
        }
        match self.step {
            Step::NewHeight => self.start_round(now, 0, &mut out),
            Step::Propose => {
                if self.behavior == Behavior::Honest {
                    self.vote(VoteKind::Prevote, None, &mut out);
                }
                self.enter(Step::Prevote, &mut out);
            }
            Step::Prevote => {
                if self.behavior == Behavior::Honest {
                    self.vote(VoteKind::Precommit, None, &mut out);
                }
                self.enter(Step::Precommit, &mut out);
            }
            Step::Precommit => self.start_round(now, self.round + 1, &mut out),
        }
        self.evaluate(now, &mut out);
        out
    }

    pub fn on_message(&mut self, now: u64, msg: &ConsensusMessage) -> Vec<Action> {
        let mut out = Vec::new();
        let from = self.index_of(&msg.sender);
        if from.is_none() || !msg.is_authentic(&self.cache) {
            out.push(Action::Invalid { from });
            return out;
        }
        let from = from.expect("checked above");
        if msg.height < self.height {
            self.send_catch_up(from, msg.height, msg.round, &mut out);
            return out;
        }
        if msg.height > self.height {
            if msg.height <= self.height + MAX_BUFFERED_HEIGHTS {
                self.future.entry(msg.height).or_default().push(msg.clone());
            }
            return out;
        }
        if self.record(from, msg.clone(), &mut out) {
            self.evaluate(now, &mut out);
        }
        out
    }

    fn enter(&mut self, step: Step, out: &mut Vec<Action>) {
        self.step = step;
        self.schedule(step, self.timeout(self.round), out);
    }

    fn start_round(&mut self, now: u64, round: u32, out: &mut Vec<Action>) {
        self.round = round;
        self.enter(Step::Propose, out);
        if self.chain.config().proposer(self.height, round) != Some(self.key.public()) {
            return;
        }
        match self.behavior {
            Behavior::Honest => {
                let block = match self.valid.and_then(|(_, h)| self.blocks.get(&h)) {
                    Some(b) => b.clone(),
                    None => self.chain.form_block(
                        self.chain.config().max_txs,
                        now,
                        Seal::Bft {
                            proposer: self.key.public(),
                            round,
                        },
                    ),
                };
                let msg = ConsensusMessage::proposal(&self.key, self.height, round, block);
                self.record(self.index, msg.clone(), out);
                out.push(Action::Broadcast(msg));
            }
            Behavior::Equivocate => self.equivocate(now, round, out),
        }
    }

    fn equivocate(&mut self, now: u64, round: u32, out: &mut Vec<Action>) {
        let seal = Seal::Bft {
            proposer: self.key.public(),
            round,
        };
        let a = self
            .chain
            .form_block(self.chain.config().max_txs, now, seal.clone());
        let mut b = a.clone();
        b.header.timestamp += 1;
        let peers: Vec<usize> = (0..self.n()).filter(|&i| i != self.index).collect();
        let half = peers.len().div_ceil(2);
        for (k, block) in [a, b].into_iter().enumerate() {
            let hash = block.hash();
            let msg = ConsensusMessage::proposal(&self.key, self.height, round, block.clone());
            let targets = if k == 0 {
                &peers[..half]
            } else {
                &peers[half..]
            };
            for &to in targets {
                out.push(Action::Send {
                    to,
                    msg: msg.clone(),
                });
            }
            self.blocks.insert(hash, block);
            self.byzantine_votes(round, hash, out);
        }
    }

    fn byzantine_votes(&mut self, round: u32, hash: Digest, out: &mut Vec<Action>) {
        for kind in [VoteKind::Prevote, VoteKind::Precommit] {
            if self.sent.insert((round, kind, Some(hash))) {
                let msg =
                    ConsensusMessage::new(&self.key, kind, self.height, round, Some(hash), None);
                out.push(Action::Broadcast(msg));
            }
        }
    }

    /// Signs and broadcasts this node's single vote of `kind` for the current round.
    fn vote(&mut self, kind: VoteKind, hash: Option<Digest>, out: &mut Vec<Action>) {
        if self
            .sent
            .iter()
            .any(|(r, k, _)| *r == self.round && *k == kind)
        {
            return;
        }
        self.sent.insert((self.round, kind, hash));
        let msg = ConsensusMessage::new(&self.key, kind, self.height, self.round, hash, None);
        self.record(self.index, msg.clone(), out);
        out.push(Action::Broadcast(msg));
    }

    /// Stores a current-height message. Returns false for duplicates and for
    /// conflicting second messages, which are reported as evidence.
    fn record(&mut self, from: usize, msg: ConsensusMessage, out: &mut Vec<Action>) -> bool {
        self.round_senders
            .entry(msg.round)
            .or_default()
            .insert(from);
        // Every signed precommit for a block counts toward committing it,
        // even one that conflicts with an earlier vote from the same sender.
        let mut new_commit_vote = false;
        if let (VoteKind::Precommit, Some(h)) = (msg.kind, msg.block_hash) {
            let set = self.commit_votes.entry((msg.round, h)).or_default();
            if let std::collections::btree_map::Entry::Vacant(e) = set.entry(from) {
                e.insert(msg.clone());
                new_commit_vote = true;
            }
        }
        let existing = match msg.kind {
            VoteKind::Proposal => {
                if self.chain.config().proposer(msg.height, msg.round) != Some(msg.sender) {
                    return false;
                }
                // A conflicting proposal is still kept as a candidate block,
                // since a quorum may have precommitted it elsewhere.
                let block = msg
                    .block
                    .as_deref()
                    .expect("authentic proposal has a block");
                let hash = block.hash();
                if !self.blocks.contains_key(&hash) && self.chain.check_block_body(block).is_ok() {
                    self.blocks.insert(hash, block.clone());
                    self.block_proposals.insert(hash, msg.clone());
                }
                self.proposals.get(&msg.round)
            }
            kind => self
                .votes
                .get(&(msg.round, kind))
                .and_then(|m| m.get(&from)),
        };
        if let Some(prev) = existing {
            if prev.block_hash != msg.block_hash
                && self.evidence_seen.insert((from, msg.round, msg.kind))
            {
                out.push(Action::Evidence(Evidence {
                    sender: from,
                    height: msg.height,
                    round: msg.round,
                    kind: msg.kind,
                    first: prev.block_hash,
                    second: msg.block_hash,
                }));
            }
            return new_commit_vote;
        }
        match msg.kind {
            VoteKind::Proposal => {
                self.proposals.insert(msg.round, msg);
            }
            kind => {
                self.votes
                    .entry((msg.round, kind))
                    .or_default()
                    .insert(from, msg);
            }
        }
        true
    }

    fn tally(&self, round: u32, kind: VoteKind) -> BTreeMap<Option<Digest>, usize> {
        let mut t = BTreeMap::new();
        if let Some(votes) = self.votes.get(&(round, kind)) {
            for m in votes.values() {
                *t.entry(m.block_hash).or_insert(0) += 1;
            }
        }
        t
    }

    /// The value (a block hash or nil) with more than two thirds of votes.
    fn quorum_value(&self, round: u32, kind: VoteKind) -> Option<Option<Digest>> {
        let n = self.n();
        self.tally(round, kind)
            .into_iter()
            .find(|(_, c)| is_quorum(*c, n))
            .map(|(v, _)| v)
    }

    fn evaluate(&mut self, now: u64, out: &mut Vec<Action>) {
        loop {
            if self.try_commit(out) {
                continue;
            }
            if self.step == Step::NewHeight {
                return;
            }
            let n = self.n();
            let skip = self
                .round_senders
                .range(self.round + 1..)
                .filter(|(_, s)| s.len() * 3 > n)
                .map(|(r, _)| *r)
                .max();
            if let Some(r) = skip {
                self.start_round(now, r, out);
                continue;
            }
            match self.behavior {
                Behavior::Honest => {
                    if !self.honest_step(now, out) {
                        return;
                    }
                }
                Behavior::Equivocate => {
                    let seen: Vec<(u32, Digest)> = self
                        .proposals
                        .iter()
                        .filter_map(|(r, m)| m.block_hash.map(|h| (*r, h)))
                        .filter(|(_, h)| self.blocks.contains_key(h))
                        .collect();
                    for (r, h) in seen {
                        self.byzantine_votes(r, h, out);
                    }
                    return;
                }
            }
        }
    }

    /// Applies at most one honest transition; returns whether one happened.
    fn honest_step(&mut self, now: u64, out: &mut Vec<Action>) -> bool {
        for r in self
            .votes
            .keys()
            .filter(|(_, k)| *k == VoteKind::Prevote)
            .map(|(r, _)| *r)
            .collect::<Vec<_>>()
        {
            if let Some(Some(h)) = self.quorum_value(r, VoteKind::Prevote) {
                if self.blocks.contains_key(&h) && self.valid.map_or(true, |(vr, _)| r > vr) {
                    self.valid = Some((r, h));
                }
            }
        }

        match self.step {
            Step::Propose => {
                let Some(p) = self.proposals.get(&self.round) else {
                    return false;
                };
                let h = p.block_hash.expect("proposal carries a hash");
                let lock_ok = match self.locked {
                    None => true,
                    Some((_, lh)) if lh == h => true,
                    Some((lr, _)) => (lr + 1..self.round)
                        .any(|pr| self.quorum_value(pr, VoteKind::Prevote) == Some(Some(h))),
                };
                let choice = (self.blocks.contains_key(&h) && lock_ok).then_some(h);
                self.vote(VoteKind::Prevote, choice, out);
                self.enter(Step::Prevote, out);
                true
            }
            Step::Prevote => match self.quorum_value(self.round, VoteKind::Prevote) {
                Some(Some(h)) if self.blocks.contains_key(&h) => {
                    self.locked = Some((self.round, h));
                    self.vote(VoteKind::Precommit, Some(h), out);
                    self.enter(Step::Precommit, out);
                    true
                }
                Some(None) => {
                    self.vote(VoteKind::Precommit, None, out);
                    self.enter(Step::Precommit, out);
                    true
                }
                _ => false,
            },
            Step::Precommit => {
                if self.quorum_value(self.round, VoteKind::Precommit) == Some(None) {
                    self.start_round(now, self.round + 1, out);
                    true
                } else {
                    false
                }
            }
            Step::NewHeight => false,
        }
    }

    fn try_commit(&mut self, out: &mut Vec<Action>) -> bool {
        let n = self.n();
        let decided = self
            .commit_votes
            .iter()
            .find(|((_, h), set)| is_quorum(set.len(), n) && self.blocks.contains_key(h))
            .map(|(k, _)| *k);
        let Some((round, hash)) = decided else {
            return false;
        };

        let voters: Vec<ConsensusMessage> = self.commit_votes[&(round, hash)]
            .values()
            .cloned()
            .collect();
        let mut block = self.blocks[&hash].clone();
        block.commit = Some(CommitCertificate {
            height: self.height,
            round,
            block_hash: hash,
            precommits: voters
                .iter()
                .map(|m| Precommit {
                    validator: m.sender,
                    signature: m.signature,
                })
                .collect(),
        });
        if let Err(e) = self.chain.apply_block(block.clone()) {
            log::warn!("node {} could not apply decided block: {e}", self.index);
            return false;
        }

        let mut record: Vec<ConsensusMessage> = self
            .block_proposals
            .get(&hash)
            .cloned()
            .into_iter()
            .collect();
        record.extend(voters);
        self.history.insert(self.height, record);
        out.push(Action::Commit(Box::new(block)));

        self.height += 1;
        self.round = 0;
        self.locked = None;
        self.valid = None;
        self.blocks.clear();
        self.block_proposals.clear();
        self.proposals.clear();
        self.votes.clear();
        self.commit_votes.clear();
        self.round_senders.clear();
        self.sent.clear();
        self.evidence_seen.clear();
        self.step = Step::NewHeight;
        self.schedule(Step::NewHeight, self.block_time_ms, out);

        let buffered = self.future.remove(&self.height).unwrap_or_default();
        self.future = self.future.split_off(&self.height);
        for m in buffered {
            if let Some(from) = self.index_of(&m.sender) {
                self.record(from, m, out);
            }
        }
        true
    }

    /// Replays the decisive proposal and precommits for `height` to a peer
    /// that is still working on it, at most once per round the peer reaches.
    fn send_catch_up(&mut self, to: usize, height: u64, round: u32, out: &mut Vec<Action>) {
        if to == self.index || !self.caught_up.insert((to, height, round)) {
            return;
        }
        if let Some(msgs) = self.history.get(&height) {
            for m in msgs {
                out.push(Action::Send { to, msg: m.clone() });
            }
        }
    }

    /// Adds a client transaction to this node's pending list.
    pub fn submit(
        &mut self,
        tx: crate::ledger::Transaction,
    ) -> Result<bool, crate::ledger::LedgerError> {
        self.chain.append_pending(tx)
    }
}
