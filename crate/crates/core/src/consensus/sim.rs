//! Seeded, logical-time gossip network that drives a set of [`Node`]s.
//!
//! Every source of nondeterminism (target selection, latency, drops) comes
//! from one `ChaCha8Rng` seeded by the config, and events are ordered by
//! (time, insertion sequence), so one config always produces one trace.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::message::ConsensusMessage;
use super::node::{Action, Behavior, Node, TimeoutKey};
use super::trace::{MessageSummary, Trace, TraceEvent};
use super::ConsensusError;
use crate::crypto::{hash_parts, Digest, PublicKey, SigningKeyPair, VerifyCache};
use crate::ledger::{build_create_tx, map_of, Transaction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Stops processing everything from `at_ms` on. At 0 the node never starts.
    Crash,
    Equivocate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub node: usize,
    pub kind: FaultKind,
    #[serde(default)]
    pub at_ms: u64,
}

/// While `from_ms <= t < until_ms`, messages only flow inside a group.
/// A node listed in no group is isolated from everyone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub from_ms: u64,
    pub until_ms: u64,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    fn separates(&self, t: u64, a: usize, b: usize) -> bool {
        if t < self.from_ms || t >= self.until_ms || a == b {
            return false;
        }
        let group = |x: usize| self.groups.iter().position(|g| g.contains(&x));
        match (group(a), group(b)) {
            (Some(ga), Some(gb)) => ga != gb,
            _ => true,
        }
    }
}

fn default_block_time() -> u64 {
    100
}
fn default_latency() -> [u64; 2] {
    [5, 40]
}
fn default_max_txs() -> usize {
    4
}
fn default_txs_per_height() -> usize {
    2
}
fn default_heights() -> u64 {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub nodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_heights")]
    pub heights: u64,
    #[serde(default = "default_block_time")]
    pub block_time_ms: u64,
    #[serde(default = "default_latency")]
    pub latency_ms: [u64; 2],
    #[serde(default)]
    pub drop_probability: f64,
    /// Gossip fan-out; `None` means ⌈n/2⌉.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fanout: Option<usize>,
    #[serde(default = "default_max_txs")]
    pub max_txs: usize,
    #[serde(default = "default_txs_per_height")]
    pub txs_per_height: usize,
    /// Logical-time cutoff; `None` derives one from heights and block time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time_ms: Option<u64>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub partitions: Vec<Partition>,
}

impl NetworkConfig {
    pub fn new(nodes: usize, seed: u64) -> Self {
        Self {
            nodes,
            seed,
            heights: default_heights(),
            block_time_ms: default_block_time(),
            latency_ms: default_latency(),
            drop_probability: 0.0,
            fanout: None,
            max_txs: default_max_txs(),
            txs_per_height: default_txs_per_height(),
            max_time_ms: None,
            faults: Vec::new(),
            partitions: Vec::new(),
        }
    }

    pub fn with_fault(mut self, node: usize, kind: FaultKind, at_ms: u64) -> Self {
        self.faults.push(Fault { node, kind, at_ms });
        self
    }

    pub fn fanout(&self) -> usize {
        self.fanout.unwrap_or(self.nodes.div_ceil(2)).max(1)
    }

    pub fn max_time(&self) -> u64 {
        self.max_time_ms
            .unwrap_or((self.heights + 2) * self.block_time_ms * 60)
    }

    pub fn behavior(&self, node: usize) -> Behavior {
        if self
            .faults
            .iter()
            .any(|f| f.node == node && f.kind == FaultKind::Equivocate)
        {
            Behavior::Equivocate
        } else {
            Behavior::Honest
        }
    }

    pub fn byzantine_count(&self) -> usize {
        (0..self.nodes)
            .filter(|&i| self.behavior(i) == Behavior::Equivocate)
            .count()
    }

    /// True when Byzantine nodes reach n/3, where safety is no longer promised.
    pub fn exceeds_fault_bound(&self) -> bool {
        self.byzantine_count() * 3 >= self.nodes
    }

    pub fn validate(&self) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::Config(m));
        if self.nodes == 0 || self.nodes > 128 {
            return bad(format!("node count {} outside 1..=128", self.nodes));
        }
        if self.latency_ms[0] > self.latency_ms[1] {
            return bad("latency_ms minimum exceeds maximum".into());
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must lie in [0, 1]".into());
        }
        if self.block_time_ms == 0 {
            return bad("block_time_ms must be positive".into());
        }
        if self.max_txs == 0 {
            return bad("max_txs must be positive".into());
        }
        if self.byzantine_count() > 0 && self.nodes < 4 {
            return bad("Byzantine scenarios need at least 4 nodes".into());
        }
        for f in &self.faults {
            if f.node >= self.nodes {
                return bad(format!("fault names node {} of {}", f.node, self.nodes));
            }
        }
        for p in &self.partitions {
            if p.groups.iter().flatten().any(|&i| i >= self.nodes) {
                return bad("partition names an unknown node".into());
            }
        }
        Ok(())
    }

    pub fn validator_keys(&self) -> Vec<SigningKeyPair> {
        (0..self.nodes)
            .map(|i| {
                let seed = hash_parts(&[
                    b"ehrchain/validator",
                    &self.seed.to_le_bytes(),
                    &(i as u64).to_le_bytes(),
                ]);
                SigningKeyPair::from_seed(&seed.0).expect("32-byte seed")
            })
            .collect()
    }

    /// The CREATE transactions every node starts with in its pending list.
    pub fn workload(&self) -> Vec<Transaction> {
        let seed = hash_parts(&[b"ehrchain/client", &self.seed.to_le_bytes()]);
        let client = SigningKeyPair::from_seed(&seed.0).expect("32-byte seed");
        let total = self.txs_per_height as u64 * self.heights;
        (0..total)
            .map(|i| {
                build_create_tx(
                    &client,
                    map_of([
                        ("type", serde_json::json!("sim-record")),
                        ("seq", serde_json::json!(i)),
                    ]),
                    None,
                )
            })
            .collect()
    }
}

#[derive(Debug)]
enum Event {
    Start(usize),
    Crash(usize),
    Timeout(usize, TimeoutKey),
    Deliver {
        from: usize,
        to: usize,
        msg: Arc<ConsensusMessage>,
        relay: bool,
    },
}

pub struct SimOutcome {
    pub trace: Trace,
    pub nodes: Vec<Node>,
    pub crashed: Vec<bool>,
}

impl SimOutcome {
    pub fn committed_heights(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.chain().height()).collect()
    }
}

struct Simulation<'a> {
    config: &'a NetworkConfig,
    validators: Arc<Vec<PublicKey>>,
    nodes: Vec<Node>,
    crashed: Vec<bool>,
    queue: BTreeMap<(u64, u64), Event>,
    seq: u64,
    rng: ChaCha8Rng,
    received: HashMap<Digest, u128>,
    informed: HashMap<Digest, u128>,
    events: Vec<TraceEvent>,
}

pub fn run_simulation(config: &NetworkConfig) -> Result<SimOutcome, ConsensusError> {
    config.validate()?;
    if config.exceeds_fault_bound() {
        log::warn!(
            "{} of {} validators are Byzantine; safety is not guaranteed",
            config.byzantine_count(),
            config.nodes
        );
    }
    let keys = config.validator_keys();
    let validators: Arc<Vec<PublicKey>> = Arc::new(keys.iter().map(|k| k.public()).collect());
    let cache = Arc::new(VerifyCache::new());
    let workload = config.workload();
    let mut nodes = Vec::with_capacity(config.nodes);
    for (i, key) in keys.into_iter().enumerate() {
        let mut node = Node::new(
            i,
            key,
            validators.clone(),
            config.behavior(i),
            config.block_time_ms,
            config.max_txs,
            cache.clone(),
        );
        for tx in &workload {
            node.submit(tx.clone())?;
        }
        nodes.push(node);
    }

    let mut sim = Simulation {
        config,
        validators: validators.clone(),
        crashed: vec![false; config.nodes],
        nodes,
        queue: BTreeMap::new(),
        seq: 0,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        received: HashMap::new(),
        informed: HashMap::new(),
        events: vec![TraceEvent::Header {
            config: config.clone(),
            validators: validators.to_vec(),
            byzantine_bound_exceeded: config.exceeds_fault_bound(),
        }],
    };
    for f in &config.faults {
        if f.kind == FaultKind::Crash {
            sim.push(f.at_ms, Event::Crash(f.node));
        }
    }
    for i in 0..config.nodes {
        sim.push(0, Event::Start(i));
    }
    sim.run();

    let heights = sim.nodes.iter().map(|n| n.chain().height()).collect();
    let end = sim.queue.keys().next().map_or(0, |k| k.0);
    sim.events.push(TraceEvent::End {
        t: end.min(config.max_time()),
        heights,
    });
    Ok(SimOutcome {
        trace: Trace { events: sim.events },
        nodes: sim.nodes,
        crashed: sim.crashed,
    })
}

impl Simulation<'_> {
    fn push(&mut self, t: u64, e: Event) {
        self.queue.insert((t, self.seq), e);
        self.seq += 1;
    }

    fn done(&self) -> bool {
        (0..self.config.nodes)
            .filter(|&i| !self.crashed[i] && self.nodes[i].behavior() == Behavior::Honest)
            .all(|i| self.nodes[i].chain().height() >= self.config.heights)
    }

    fn run(&mut self) {
        let limit = self.config.max_time();
        while let Some((&(now, _), _)) = self.queue.first_key_value() {
            if now > limit || self.done() {
                break;
            }
            let (_, event) = self.queue.pop_first().expect("queue is non-empty");
            match event {
                Event::Crash(i) => {
                    if !self.crashed[i] {
                        self.crashed[i] = true;
                        self.events.push(TraceEvent::Crash { t: now, node: i });
                    }
                }
                Event::Start(i) => {
                    if !self.crashed[i] {
                        let actions = self.nodes[i].on_start(now);
                        self.apply(now, i, actions);
                    }
                }
                Event::Timeout(i, key) => {
                    if !self.crashed[i] {
                        self.events.push(TraceEvent::Timeout {
                            t: now,
                            node: i,
                            height: key.height,
                            round: key.round,
                            step: key.step,
                        });
                        let actions = self.nodes[i].on_timeout(now, key);
                        self.apply(now, i, actions);
                    }
                }
                Event::Deliver {
                    from,
                    to,
                    msg,
                    relay,
                } => self.deliver(now, from, to, msg, relay),
            }
        }
    }

    fn deliver(
        &mut self,
        now: u64,
        from: usize,
        to: usize,
        msg: Arc<ConsensusMessage>,
        relay: bool,
    ) {
        if self.crashed[to] {
            return;
        }
        let id = msg.gossip_id();
        let mask = self.received.entry(id).or_insert(0);
        if *mask & (1 << to) != 0 {
            return;
        }
        *mask |= 1 << to;
        self.events.push(TraceEvent::Deliver {
            t: now,
            from,
            to,
            msg: MessageSummary::of(&msg, self.validators.iter().position(|v| *v == msg.sender)),
        });
        if relay {
            self.gossip(now, to, &msg, id);
        }
        let actions = self.nodes[to].on_message(now, &msg);
        self.apply(now, to, actions);
    }

    fn apply(&mut self, now: u64, node: usize, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Broadcast(msg) => {
                    let id = msg.gossip_id();
                    *self.received.entry(id).or_insert(0) |= 1 << node;
                    *self.informed.entry(id).or_insert(0) |= 1 << node;
                    self.gossip(now, node, &Arc::new(msg), id);
                }
                Action::Send { to, msg } => self.transmit(now, node, to, Arc::new(msg), false),
                Action::Schedule { key, delay_ms } => {
                    self.push(now + delay_ms, Event::Timeout(node, key))
                }
                Action::Commit(block) => self.events.push(TraceEvent::Commit {
                    t: now,
                    node,
                    height: block.height(),
                    block,
                }),
                Action::Evidence(evidence) => self.events.push(TraceEvent::Evidence {
                    t: now,
                    node,
                    evidence,
                }),
                Action::Invalid { from } => {
                    self.events
                        .push(TraceEvent::InvalidSignature { t: now, node, from })
                }
            }
        }
    }

    /// Forwards to up to `fanout` live peers not yet sent this message.
    fn gossip(&mut self, now: u64, node: usize, msg: &Arc<ConsensusMessage>, id: Digest) {
        let informed = self.informed.get(&id).copied().unwrap_or(0);
        let candidates: Vec<usize> = (0..self.config.nodes)
            .filter(|&j| j != node && informed & (1 << j) == 0 && !self.crashed[j])
            .collect();
        let targets: Vec<usize> = candidates
            .choose_multiple(&mut self.rng, self.config.fanout())
            .copied()
            .collect();
        for to in targets {
            self.transmit(now, node, to, msg.clone(), true);
        }
    }

    fn transmit(
        &mut self,
        now: u64,
        from: usize,
        to: usize,
        msg: Arc<ConsensusMessage>,
        relay: bool,
    ) {
        let reason = if self
            .config
            .partitions
            .iter()
            .any(|p| p.separates(now, from, to))
        {
            Some("partition")
        } else if self.config.drop_probability > 0.0
            && self.rng.gen_bool(self.config.drop_probability)
        {
            Some("random")
        } else {
            None
        };
        if let Some(reason) = reason {
            self.events.push(TraceEvent::Drop {
                t: now,
                from,
                to,
                kind: msg.kind,
                reason: reason.to_string(),
            });
            return;
        }
        if relay {
            *self.informed.entry(msg.gossip_id()).or_insert(0) |= 1 << to;
        }
        let [lo, hi] = self.config.latency_ms;
        let at = now + self.rng.gen_range(lo..=hi);
        self.push(
            at,
            Event::Deliver {
                from,
                to,
                msg,
                relay,
            },
        );
    }
}

/// Runs many configs on scoped threads; results keep the input order.
pub fn run_many(configs: &[NetworkConfig]) -> Vec<Result<SimOutcome, ConsensusError>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(configs.len().max(1));
    let mut slots: Vec<Option<Result<SimOutcome, ConsensusError>>> =
        (0..configs.len()).map(|_| None).collect();
    let chunk = configs.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        for (cfgs, out) in configs.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            s.spawn(move || {
                for (c, o) in cfgs.iter().zip(out.iter_mut()) {
                    *o = Some(run_simulation(c));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}
