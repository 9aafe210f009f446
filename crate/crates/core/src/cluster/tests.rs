use serde_json::json;

use super::*;
use crate::crypto::SigningKeyPair;
use crate::ledger::{build_create_tx, build_transfer_tx, map_of};

fn client(b: u8) -> SigningKeyPair {
    SigningKeyPair::from_seed(&[b; 32]).unwrap()
}

fn record(k: &SigningKeyPair, n: u32) -> Transaction {
    build_create_tx(k, map_of([("n", json!(n))]), None)
}

#[test]
fn cluster_commits_and_submit_is_idempotent() {
    let cluster = BftCluster::in_memory(ClusterConfig::default()).unwrap();
    let k = client(1);
    let tx = record(&k, 1);
    let first = cluster.submit(tx.clone()).unwrap();
    assert_eq!(first.height, 1);
    assert!(cluster.snapshot().is_committed(&tx.id));
    let again = cluster.submit(tx.clone()).unwrap();
    assert_eq!(first, again);
    assert_eq!(cluster.snapshot().height(), 1);
    for i in 0..4 {
        assert_eq!(
            cluster.node_chain(i).tip_hash(),
            cluster.snapshot().tip_hash()
        );
    }
}

#[test]
fn cluster_rejects_invalid_transaction() {
    let cluster = BftCluster::in_memory(ClusterConfig::default()).unwrap();
    let k = client(2);
    let tx = record(&k, 1);
    cluster.submit(tx.clone()).unwrap();
    let t1 = build_transfer_tx(&k, tx.output_ref(0), tx.id, client(3).public(), None);
    cluster.submit(t1).unwrap();
    let double = build_transfer_tx(&k, tx.output_ref(0), tx.id, client(4).public(), None);
    assert!(matches!(cluster.submit(double), Err(NodeError::Ledger(_))));
}

#[test]
fn one_crash_of_four_keeps_committing() {
    let cluster = BftCluster::in_memory(ClusterConfig::default()).unwrap();
    let k = client(5);
    cluster.submit(record(&k, 1)).unwrap();
    cluster.crash(2);
    for n in 2..6 {
        cluster.submit(record(&k, n)).unwrap();
    }
    assert_eq!(cluster.snapshot().height(), 5);
}

#[test]
fn two_crashes_of_four_stall() {
    let cluster = BftCluster::in_memory(ClusterConfig::default()).unwrap();
    cluster.crash(0);
    cluster.crash(3);
    let err = cluster.submit(record(&client(6), 1)).unwrap_err();
    assert!(matches!(err, NodeError::Stalled));
}

#[test]
fn cluster_resumes_from_disk_and_one_dir_rebuilds_everything() {
    let dir = tempfile::tempdir().unwrap();
    let k = client(7);
    let blob = b"lab panel: potassium 4.1\n".repeat(400);
    let (cid, tip) = {
        let cluster = BftCluster::open(dir.path(), ClusterConfig::default()).unwrap();
        for n in 0..3 {
            cluster.submit(record(&k, n)).unwrap();
        }
        let cid = cluster.put_blob(&blob).unwrap();
        (cid, cluster.snapshot().tip_hash())
    };
    let reopened = BftCluster::open(dir.path(), ClusterConfig::default()).unwrap();
    assert_eq!(reopened.snapshot().tip_hash(), tip);
    reopened.submit(record(&k, 3)).unwrap();
    assert_eq!(reopened.snapshot().height(), 4);
    let tip = reopened.snapshot().tip_hash();
    drop(reopened);

    let replica = ReplicaNode::open(&node_dir(dir.path(), 2)).unwrap();
    assert_eq!(replica.snapshot().tip_hash(), tip);
    assert_eq!(replica.get_blob(&cid).unwrap(), blob);
    match replica.store().resolve(&cid).unwrap().payload {
        crate::store::DhtPayload::Holders(h) => assert_eq!(h.len(), 4),
        other => panic!("expected holders, got {other:?}"),
    }
    assert!(matches!(
        replica.submit(record(&k, 9)),
        Err(NodeError::ReadOnly)
    ));
}

#[test]
fn tampered_chain_file_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    {
        let cluster = BftCluster::open(dir.path(), ClusterConfig::default()).unwrap();
        cluster.submit(record(&client(8), 1)).unwrap();
    }
    let path = node_dir(dir.path(), 1).join(CHAIN_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"n\":1", "\"n\":2", 1)).unwrap();
    assert!(ReplicaNode::open(&node_dir(dir.path(), 1)).is_err());
}

#[test]
fn pow_node_mines_each_submission() {
    let dir = tempfile::tempdir().unwrap();
    let k = client(9);
    {
        let node = PowNode::open(dir.path(), 8).unwrap();
        node.submit(record(&k, 1)).unwrap();
        node.submit(record(&k, 2)).unwrap();
        assert_eq!(node.snapshot().height(), 2);
    }
    let replica = ReplicaNode::open(dir.path()).unwrap();
    assert_eq!(replica.snapshot().height(), 2);
}
