//! Reading record state back from the chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{EhrError, GrantStatus, RecordKind};
use crate::cluster::LedgerBackend;
use crate::crypto::{
    aes_decrypt, unwrap_key, AgreementPublic, Ciphertext, Digest, KeyBundle, PublicKey,
    SymmetricKey, WrappedKey,
};
use crate::ledger::{Asset, ChainState, Operation, OutputRef, Transaction};
use crate::store::ContentId;

pub const RECORD_ASSET_TYPE: &str = "ehr-record";
const META_KEY: &str = "ehr";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineageAction {
    Create,
    Grant,
    Revoke,
}

/// The record key wrapped to one reader.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyEntry {
    pub agreement: AgreementPublic,
    pub wrapped: WrappedKey,
}

/// Metadata every transaction in a record lineage carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub action: LineageAction,
    pub kind: RecordKind,
    pub generation: u32,
    pub author: PublicKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grantee: Option<PublicKey>,
    /// The content id, AES-CBC encrypted under the record key, hex.
    pub enc_cid: String,
    /// Readers keyed by signing key (hex).
    pub keys: BTreeMap<String, KeyEntry>,
}

impl RecordMeta {
    pub fn to_metadata(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert(
            META_KEY.into(),
            serde_json::to_value(self).expect("record metadata encodes"),
        );
        m
    }

    pub fn from_tx(tx: &Transaction) -> Option<Self> {
        let v = tx.metadata.as_ref()?.get(META_KEY)?;
        serde_json::from_value(v.clone()).ok()
    }

    pub fn entry(&self, reader: &PublicKey) -> Option<&KeyEntry> {
        self.keys.get(&reader.to_hex())
    }

    pub fn readers(&self) -> impl Iterator<Item = PublicKey> + '_ {
        self.keys.keys().filter_map(|k| PublicKey::from_hex(k).ok())
    }
}

pub(crate) fn asset_data(kind: RecordKind) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("type".into(), Value::from(RECORD_ASSET_TYPE));
    m.insert("kind".into(), Value::from(kind.as_str()));
    m
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrantState {
    /// Id of the transaction that introduced the grant.
    pub id: Digest,
    pub grantee: PublicKey,
    pub status: GrantStatus,
    pub granted_height: u64,
    pub revoke_tx: Option<Digest>,
}

/// A record as the chain currently describes it.
#[derive(Clone, Debug)]
pub struct RecordState {
    pub id: Digest,
    pub kind: RecordKind,
    pub owner: PublicKey,
    pub author: PublicKey,
    pub created_height: u64,
    pub created_index: usize,
    pub created_at: u64,
    pub updated_height: u64,
    /// Unspent output the next lineage transaction must spend.
    pub head: OutputRef,
    pub meta: RecordMeta,
    pub grants: Vec<GrantState>,
}

impl RecordState {
    pub fn generation(&self) -> u32 {
        self.meta.generation
    }

    pub fn active_grant(&self, who: &PublicKey) -> Option<&GrantState> {
        self.grants
            .iter()
            .find(|g| g.grantee == *who && g.status == GrantStatus::Active)
    }

    pub fn active_grantees(&self) -> Vec<PublicKey> {
        self.grants
            .iter()
            .filter(|g| g.status == GrantStatus::Active)
            .map(|g| g.grantee)
            .collect()
    }

    /// Owner, or holder of an active grant.
    pub fn can_read(&self, who: &PublicKey) -> bool {
        self.owner == *who || self.active_grant(who).is_some()
    }
}

fn located(chain: &ChainState, id: &Digest) -> Option<(u64, usize, u64)> {
    let (h, i) = chain.tx_location(id)?;
    Some((h, i, chain.blocks()[h as usize].header.timestamp))
}

/// Folds a record's lineage into its current state. `None` if `id` is not
/// the CREATE of a record.
pub fn record_state(chain: &ChainState, id: &Digest) -> Option<RecordState> {
    let history = chain.get_asset_history(id);
    let (create, rest) = history.split_first()?;
    if create.operation != Operation::Create {
        return None;
    }
    let Asset::Data(data) = &create.asset else {
        return None;
    };
    if data.get("type").and_then(Value::as_str) != Some(RECORD_ASSET_TYPE) {
        return None;
    }
    let meta = RecordMeta::from_tx(create).filter(|m| m.action == LineageAction::Create)?;
    let (created_height, created_index, created_at) = located(chain, &create.id)?;
    let owner = create.outputs.first()?.owner;
    let grants = meta
        .readers()
        .filter(|r| *r != owner)
        .map(|grantee| GrantState {
            id: create.id,
            grantee,
            status: GrantStatus::Active,
            granted_height: created_height,
            revoke_tx: None,
        })
        .collect();
    let mut state = RecordState {
        id: create.id,
        kind: meta.kind,
        owner,
        author: meta.author,
        created_height,
        created_index,
        created_at,
        updated_height: created_height,
        head: create.output_ref(0),
        meta,
        grants,
    };
    for tx in rest {
        let Some(out) = tx.outputs.first() else {
            continue;
        };
        state.owner = out.owner;
        state.head = tx.output_ref(0);
        state.updated_height = located(chain, &tx.id).map(|l| l.0)?;
        let Some(meta) = RecordMeta::from_tx(tx) else {
            continue;
        };
        match (meta.action, meta.grantee) {
            (LineageAction::Grant, Some(grantee)) => state.grants.push(GrantState {
                id: tx.id,
                grantee,
                status: GrantStatus::Active,
                granted_height: state.updated_height,
                revoke_tx: None,
            }),
            (LineageAction::Revoke, Some(grantee)) => {
                for g in state.grants.iter_mut().filter(|g| g.grantee == grantee) {
                    if g.status == GrantStatus::Active {
                        g.status = GrantStatus::Revoked;
                        g.revoke_tx = Some(tx.id);
                    }
                }
            }
            _ => {}
        }
        state.meta = meta;
    }
    Some(state)
}

/// Every record on the chain, in creation order (height, then position).
pub fn scan_records(chain: &ChainState) -> Vec<RecordState> {
    chain
        .blocks()
        .iter()
        .flat_map(|b| b.txs.iter())
        .filter(|tx| tx.operation == Operation::Create)
        .filter_map(|tx| record_state(chain, &tx.id))
        .collect()
}

pub fn unwrap_record_key(
    state: &RecordState,
    reader: &KeyBundle,
) -> Result<SymmetricKey, EhrError> {
    let entry = state
        .meta
        .entry(&reader.signing_public())
        .ok_or(EhrError::AccessDenied)?;
    Ok(unwrap_key(&entry.wrapped, &reader.agreement)?)
}

pub fn decrypt_cid(state: &RecordState, key: &SymmetricKey) -> Result<ContentId, EhrError> {
    let bytes = hex::decode(&state.meta.enc_cid)
        .map_err(|_| EhrError::Integrity("encrypted content id is not hex".into()))?;
    let plain = aes_decrypt(key, &Ciphertext::from_bytes(&bytes)?)?;
    let digest: [u8; 32] = plain
        .try_into()
        .map_err(|_| EhrError::Integrity("content id has the wrong length".into()))?;
    Ok(ContentId(Digest(digest)))
}

/// Decrypts a record's current content with `reader`'s keys. Works against
/// any backend, including a replica rebuilt from a single node directory.
pub fn open_record(
    backend: &dyn LedgerBackend,
    state: &RecordState,
    reader: &KeyBundle,
) -> Result<Vec<u8>, EhrError> {
    let key = unwrap_record_key(state, reader)?;
    let cid = decrypt_cid(state, &key)?;
    let blob = backend.get_blob(&cid).map_err(|e| match e {
        crate::cluster::NodeError::Store(s) => EhrError::from(s),
        other => EhrError::Node(other),
    })?;
    let ct = Ciphertext::from_bytes(&blob)
        .map_err(|e| EhrError::Integrity(format!("stored ciphertext: {e}")))?;
    aes_decrypt(&key, &ct).map_err(|e| EhrError::Integrity(format!("decrypting content: {e}")))
}
