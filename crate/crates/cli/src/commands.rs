use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use ehrchain_core::cluster::{read_chain_file, read_meta, NodeError, NodeMeta, NODE_META};
use ehrchain_core::consensus::{check_trace, run_simulation, NetworkConfig, Trace};
use ehrchain_core::crypto::{read_key_file, write_key_file, Digest, KeyBundle, KeyFile, PublicKey};
use ehrchain_core::ledger::{
    build_create_tx, build_transfer_tx, read_chain_dump, verify_chain_dump, Asset, Block,
    BlockStatus, Operation, Seal,
};
use ehrchain_service::{open_ledger, serve, ServiceConfig};
use serde_json::{Map, Value};

use crate::{usage, KeygenArgs, LedgerArgs, NodeRunArgs, Outcome, TxSubmitArgs};

fn service_config(l: &LedgerArgs) -> ServiceConfig {
    ServiceConfig {
        data_dir: l.data_dir.clone(),
        mode: l.mode,
        nodes: l.nodes,
        block_time_ms: l.block_time_ms,
        pow_bits: l.pow_bits,
        max_txs: l.max_txs,
        seed: l.seed,
        ..ServiceConfig::default()
    }
}

fn parse_seed(hex_seed: &str) -> Result<[u8; 32]> {
    let bytes = Digest::from_hex(hex_seed.trim())
        .map_err(|_| usage("--seed must be 64 hex characters (32 bytes)"))?;
    Ok(bytes.0)
}

pub fn keygen(a: KeygenArgs) -> Result<Outcome> {
    if a.out.exists() && !a.force {
        return Err(usage(format!(
            "{} exists; pass --force to replace it",
            a.out.display()
        )));
    }
    let bundle = match &a.seed {
        Some(s) => KeyBundle::from_master_seed(&parse_seed(s)?),
        None => KeyBundle::generate(&mut rand::rngs::OsRng),
    };
    let file = KeyFile::seal(&bundle, &a.passphrase, a.iterations);
    write_key_file(&a.out, &file).with_context(|| format!("writing {}", a.out.display()))?;
    println!("signing_public {}", bundle.signing_public().to_hex());
    println!("agreement_public {}", bundle.agreement_public().to_hex());
    println!("key_file {}", a.out.display());
    Ok(Outcome::Pass)
}

pub fn node_run(a: NodeRunArgs) -> Result<Outcome> {
    let config = ServiceConfig {
        listen: a.listen,
        session_ttl: Duration::from_secs(a.session_ttl_secs),
        vitals_batch: a.vitals_batch,
        otp_seed: a.otp_seed,
        ..service_config(&a.ledger)
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(serve(config))?;
    Ok(Outcome::Pass)
}

pub fn sim_run(scenario: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Outcome> {
    let mut config =
        NetworkConfig::load(scenario).map_err(|e| usage(format!("{}: {e}", scenario.display())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let outcome = run_simulation(&config)?;
    let ndjson = outcome.trace.to_ndjson();
    let mut summary: Vec<String> = outcome
        .nodes
        .iter()
        .zip(&outcome.crashed)
        .enumerate()
        .map(|(i, (n, crashed))| {
            format!(
                "node {i} height {} crashed {crashed} behavior {:?}",
                n.chain().height(),
                n.behavior()
            )
        })
        .collect();
    summary.push(format!("evidence {}", outcome.trace.evidence_count()));
    summary.push(format!("events {}", outcome.trace.events.len()));
    match out {
        Some(path) => {
            std::fs::write(path, ndjson).with_context(|| format!("writing {}", path.display()))?;
            for line in summary {
                println!("{line}");
            }
            println!("trace {}", path.display());
        }
        None => {
            std::io::stdout().write_all(ndjson.as_bytes())?;
            for line in summary {
                eprintln!("{line}");
            }
        }
    }
    Ok(Outcome::Pass)
}

pub fn sim_check(path: &Path) -> Result<Outcome> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let verdict = match Trace::from_ndjson(&text).and_then(|t| check_trace(&t)) {
        Ok(v) => v,
        Err(e) => {
            println!("verdict fail");
            println!("error {e}");
            return Ok(Outcome::Fail);
        }
    };
    println!("commits_checked {}", verdict.commits_checked);
    match verdict.violation {
        None => {
            println!("verdict pass");
            Ok(Outcome::Pass)
        }
        Some(v) => {
            println!("verdict fail");
            println!(
                "violation property={:?} event={} node={} height={}",
                v.property, v.event, v.node, v.height
            );
            println!("detail {}", v.detail);
            Ok(Outcome::Fail)
        }
    }
}

fn json_object(flag: &str, text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(usage(format!("{flag} must be a JSON object"))),
        Err(e) => Err(usage(format!("{flag}: {e}"))),
    }
}

pub fn tx_submit(a: TxSubmitArgs) -> Result<Outcome> {
    if a.ledger.data_dir.is_none() {
        return Err(usage(
            "tx submit needs --data-dir (or EHRCHAIN_DATA_DIR) pointing at a ledger",
        ));
    }
    let keys = read_key_file(&a.key)
        .map_err(|e| usage(format!("{}: {e}", a.key.display())))?
        .open(&a.passphrase)
        .map_err(|e| usage(format!("{}: {e}", a.key.display())))?;
    let metadata = a
        .metadata
        .as_deref()
        .map(|m| json_object("--metadata", m))
        .transpose()?;
    let ledger = open_ledger(&service_config(&a.ledger))?;

    let tx = match (&a.create, &a.transfer) {
        (Some(data), None) => {
            build_create_tx(&keys.signing, json_object("--create", data)?, metadata)
        }
        (None, Some(asset)) => {
            let asset =
                Digest::from_hex(asset).map_err(|_| usage("--transfer must be a hex asset id"))?;
            let to = a.to.as_deref().unwrap_or_default();
            let to = PublicKey::from_hex(to).map_err(|_| usage("--to must be a hex public key"))?;
            let (head, _) = ledger
                .snapshot()
                .current_output(&asset)
                .ok_or_else(|| usage(format!("asset {} has no unspent output", asset.to_hex())))?;
            build_transfer_tx(&keys.signing, head, asset, to, metadata)
        }
        _ => return Err(usage("pass exactly one of --create or --transfer")),
    };

    match ledger.submit(tx.clone()) {
        Ok(c) => {
            println!("tx {}", c.tx_id.to_hex());
            println!("height {}", c.height);
            println!("block {}", c.block_hash.to_hex());
            Ok(Outcome::Pass)
        }
        Err(NodeError::Ledger(e)) => {
            println!("tx {}", tx.id.to_hex());
            println!("rejected {e}");
            Ok(Outcome::Fail)
        }
        Err(e) => Err(e.into()),
    }
}

fn load_blocks(path: &Path) -> Result<Vec<Block>> {
    let loaded = if path.is_dir() {
        read_chain_file(path).map_err(anyhow::Error::from)
    } else {
        let f = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        read_chain_dump(BufReader::new(f)).map_err(anyhow::Error::from)
    };
    loaded.map_err(|e| usage(format!("{}: {e:#}", path.display())))
}

fn seal_name(seal: &Seal) -> &'static str {
    match seal {
        Seal::Genesis => "genesis",
        Seal::Pow { .. } => "pow",
        Seal::Bft { .. } => "bft",
    }
}

pub fn chain_inspect(path: &Path) -> Result<Outcome> {
    let blocks = load_blocks(path)?;
    for b in &blocks {
        let h = b.height();
        println!(
            "block height={h} hash={} prev={} timestamp={} txs={} seal={} certified={}",
            b.hash().to_hex(),
            b.header.prev_hash.to_hex(),
            b.header.timestamp,
            b.txs.len(),
            seal_name(&b.header.seal),
            b.commit.is_some()
        );
        for (i, tx) in b.txs.iter().enumerate() {
            let op = match tx.operation {
                Operation::Create => "CREATE",
                Operation::Transfer => "TRANSFER",
            };
            let asset = match &tx.asset {
                Asset::Id(id) => id.to_hex(),
                Asset::Data(_) => tx.id.to_hex(),
            };
            let owners: Vec<String> = tx.outputs.iter().map(|o| o.owner.to_hex()).collect();
            println!(
                "tx height={h} index={i} id={} op={op} asset={asset} signer={} owner={}",
                tx.id.to_hex(),
                tx.inputs
                    .first()
                    .map(|i| i.owner.to_hex())
                    .unwrap_or_default(),
                owners.join(",")
            );
        }
    }
    if let Some(tip) = blocks.last() {
        println!("tip height={} hash={}", tip.height(), tip.hash().to_hex());
    }
    Ok(Outcome::Pass)
}

fn meta_for(path: &Path, meta: Option<&Path>) -> Result<NodeMeta> {
    let file: PathBuf = match meta {
        Some(m) => m.to_path_buf(),
        None if path.is_dir() => return read_meta(path).map_err(|e| usage(e.to_string())),
        None => path.parent().unwrap_or(Path::new(".")).join(NODE_META),
    };
    let bytes = std::fs::read(&file).map_err(|e| {
        usage(format!(
            "{}: {e} (pass --meta with the node's {NODE_META})",
            file.display()
        ))
    })?;
    serde_json::from_slice(&bytes).map_err(|e| usage(format!("{}: {e}", file.display())))
}

pub fn chain_verify(path: &Path, meta: Option<&Path>) -> Result<Outcome> {
    let meta = meta_for(path, meta)?;
    let dump = if path.is_dir() {
        path.join(ehrchain_core::cluster::CHAIN_FILE)
    } else {
        path.to_path_buf()
    };
    let f = File::open(&dump).map_err(|e| usage(format!("{}: {e}", dump.display())))?;
    let report = verify_chain_dump(BufReader::new(f), &meta.chain)?;
    for (h, s) in report.statuses.iter().enumerate() {
        match s {
            BlockStatus::Valid => println!("block height={h} status=valid"),
            BlockStatus::Unanchored => println!("block height={h} status=unanchored"),
            BlockStatus::Broken(reason) => {
                println!("block height={h} status=broken reason={reason:?}")
            }
        }
    }
    println!("replay matches={}", report.replay_matches);
    if report.passed() {
        println!("verdict pass");
        Ok(Outcome::Pass)
    } else {
        println!("verdict fail");
        if let Some(h) = report.first_invalid {
            println!("first_invalid {h}");
        }
        Ok(Outcome::Fail)
    }
}
