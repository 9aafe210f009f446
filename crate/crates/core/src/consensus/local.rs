//! In-process network with no latency or loss: messages queue in FIFO
//! order and timers fire only when nothing is in flight. Used for bounded
//! exploration (which picks delivery orders itself) and for the embedded
//! validator cluster behind the service.

use std::collections::VecDeque;
use std::sync::Arc;

use super::message::ConsensusMessage;
use super::node::{Action, Evidence, Node, TimeoutKey};
use crate::ledger::Block;

#[derive(Clone)]
pub struct LocalNet {
    pub nodes: Vec<Node>,
    pub crashed: Vec<bool>,
    inflight: VecDeque<(usize, Arc<ConsensusMessage>)>,
    timers: Vec<(u64, usize, TimeoutKey)>,
    now: u64,
    /// Every commit in order: (node, block).
    pub commits: Vec<(usize, Block)>,
    pub evidence: Vec<(usize, Evidence)>,
}

impl LocalNet {
    pub fn new(nodes: Vec<Node>) -> Self {
        Self {
            crashed: vec![false; nodes.len()],
            nodes,
            inflight: VecDeque::new(),
            timers: Vec::new(),
            now: 0,
            commits: Vec::new(),
            evidence: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn inflight_len(&self) -> usize {
        self.inflight.len()
    }

    pub fn has_timers(&self) -> bool {
        !self.timers.is_empty()
    }

    pub fn start(&mut self) {
        for i in 0..self.nodes.len() {
            if !self.crashed[i] {
                let actions = self.nodes[i].on_start(self.now);
                self.apply(i, actions);
            }
        }
    }

    pub fn crash(&mut self, node: usize) {
        self.crashed[node] = true;
    }

    fn apply(&mut self, node: usize, actions: Vec<Action>) {
        let n = self.nodes.len();
        for a in actions {
            match a {
                Action::Broadcast(m) => {
                    let m = Arc::new(m);
                    for to in (0..n).filter(|&j| j != node) {
                        self.inflight.push_back((to, m.clone()));
                    }
                }
                Action::Send { to, msg } => self.inflight.push_back((to, Arc::new(msg))),
                Action::Schedule { key, delay_ms } => {
                    self.timers.push((self.now + delay_ms, node, key))
                }
                Action::Commit(b) => self.commits.push((node, *b)),
                Action::Evidence(e) => self.evidence.push((node, e)),
                Action::Invalid { .. } => {}
            }
        }
    }

    /// Delivers the `k`-th queued message.
    pub fn deliver(&mut self, k: usize) {
        let (to, msg) = self.inflight.remove(k).expect("index in range");
        self.now += 1;
        if self.crashed[to] {
            return;
        }
        let actions = self.nodes[to].on_message(self.now, &msg);
        self.apply(to, actions);
    }

    /// Fires the earliest pending timer; false when none remain.
    pub fn fire_timer(&mut self) -> bool {
        let Some(pos) =
            (0..self.timers.len()).min_by_key(|&i| (self.timers[i].0, self.timers[i].1))
        else {
            return false;
        };
        let (due, node, key) = self.timers.swap_remove(pos);
        self.now = self.now.max(due);
        if !self.crashed[node] {
            let actions = self.nodes[node].on_timeout(self.now, key);
            self.apply(node, actions);
        }
        true
    }

    /// One FIFO step; false when the network is completely idle.
    pub fn step(&mut self) -> bool {
        if !self.inflight.is_empty() {
            self.deliver(0);
            true
        } else {
            self.fire_timer()
        }
    }

    /// Steps until `done` holds; returns whether it did within `limit` steps.
    pub fn run_until(&mut self, limit: usize, mut done: impl FnMut(&Self) -> bool) -> bool {
        for _ in 0..limit {
            if done(self) {
                return true;
            }
            if !self.step() {
                return done(self);
            }
        }
        done(self)
    }
}
