//! Bounded search over message delivery orders.
//!
//! Four validators, node 1 (the first proposer) equivocating. For the first
//! `depth` scheduling decisions the search branches over the first
//! `branching` in-flight messages plus "fire the earliest timeout"; after
//! that, the rest of the run is delivered in FIFO order. Every leaf is
//! checked for conflicting honest commits.

use std::sync::Arc;

use super::local::LocalNet;
use super::node::{Behavior, Node};
use super::sim::NetworkConfig;
use crate::crypto::{Digest, PublicKey, VerifyCache};

const LEAF_STEP_LIMIT: usize = 20_000;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExploreReport {
    pub leaves: usize,
    /// Leaves in which every honest node committed height 1.
    pub decided_leaves: usize,
    pub evidence_leaves: usize,
    pub conflicts: Vec<String>,
}

fn first_commits(net: &LocalNet) -> Vec<Option<Digest>> {
    (0..net.nodes.len())
        .filter(|&i| net.nodes[i].behavior() == Behavior::Honest)
        .map(|i| {
            net.commits
                .iter()
                .find(|(n, b)| *n == i && b.height() == 1)
                .map(|(_, b)| b.hash())
        })
        .collect()
}

fn all_decided(net: &LocalNet) -> bool {
    first_commits(net).iter().all(Option::is_some)
}

pub fn explore_equivocation(depth: usize, branching: usize, seed: u64) -> ExploreReport {
    let config = NetworkConfig::new(4, seed);
    let keys = config.validator_keys();
    let validators: Arc<Vec<PublicKey>> = Arc::new(keys.iter().map(|k| k.public()).collect());
    let cache = Arc::new(VerifyCache::new());
    let workload = NetworkConfig {
        heights: 1,
        ..config.clone()
    }
    .workload();
    let nodes = keys
        .into_iter()
        .enumerate()
        .map(|(i, key)| {
            let behavior = if i == 1 {
                Behavior::Equivocate
            } else {
                Behavior::Honest
            };
            let mut node = Node::new(
                i,
                key,
                validators.clone(),
                behavior,
                config.block_time_ms,
                config.max_txs,
                cache.clone(),
            );
            for tx in &workload {
                node.submit(tx.clone()).expect("fresh workload is valid");
            }
            node
        })
        .collect();
    let mut net = LocalNet::new(nodes);
    net.start();
    let mut report = ExploreReport::default();
    search(net, depth, branching, &mut report);
    report
}

fn search(net: LocalNet, depth: usize, branching: usize, report: &mut ExploreReport) {
    if depth == 0 || all_decided(&net) || (net.inflight_len() == 0 && !net.has_timers()) {
        let mut net = net;
        net.run_until(LEAF_STEP_LIMIT, all_decided);
        report.leaves += 1;
        if all_decided(&net) {
            report.decided_leaves += 1;
        }
        if !net.evidence.is_empty() {
            report.evidence_leaves += 1;
        }
        let honest: Vec<Digest> = first_commits(&net).into_iter().flatten().collect();
        if honest.windows(2).any(|p| p[0] != p[1]) {
            report.conflicts.push(format!(
                "leaf {}: honest commits {:?}",
                report.leaves, honest
            ));
        }
        return;
    }
    for k in 0..net.inflight_len().min(branching) {
        let mut next = net.clone();
        next.deliver(k);
        search(next, depth - 1, branching, report);
    }
    if net.has_timers() {
        let mut next = net;
        next.fire_timer();
        search(next, depth - 1, branching, report);
    }
}
