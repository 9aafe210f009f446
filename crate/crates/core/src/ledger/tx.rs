use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::canonical::{canonical_encode, compute_tx_id};
use crate::crypto::{Digest, PublicKey, Signature, SigningKeyPair};

pub const TX_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    #[serde(rename = "CREATE")]
    Create,
    #[serde(rename = "TRANSFER")]
    Transfer,
}

/// CREATE carries the asset's data; TRANSFER names the CREATE it descends from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Asset {
    Data(Map<String, Value>),
    Id(Digest),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutputRef {
    pub transaction_id: Digest,
    pub output_index: u32,
}

impl fmt::Display for OutputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.transaction_id, self.output_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub fulfills: Option<OutputRef>,
    pub owner: PublicKey,
    pub signature: Option<Signature>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Output {
    pub owner: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: Digest,
    pub version: String,
    pub operation: Operation,
    pub asset: Asset,
    pub metadata: Option<Map<String, Value>>,
    pub inputs: Vec<Input>,
    pub outputs: Vec<Output>,
}

impl Transaction {
    /// The body as a JSON value, without `id`. With `signed == false` every
    /// input signature is replaced by `null`, giving the bytes that get signed.
    pub fn body_value(&self, signed: bool) -> Value {
        let mut v = serde_json::to_value(self).expect("transaction serializes");
        let obj = v.as_object_mut().expect("transaction is an object");
        obj.remove("id");
        if !signed {
            if let Some(Value::Array(inputs)) = obj.get_mut("inputs") {
                for input in inputs {
                    if let Some(o) = input.as_object_mut() {
                        o.insert("signature".into(), Value::Null);
                    }
                }
            }
        }
        v
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical_encode(&self.body_value(false))
    }

    pub fn compute_id(&self) -> Digest {
        compute_tx_id(&self.body_value(true))
    }

    /// The lineage root: a CREATE's own id, or the id a TRANSFER points to.
    pub fn asset_id(&self) -> Digest {
        match &self.asset {
            Asset::Id(id) => *id,
            Asset::Data(_) => self.id,
        }
    }

    pub fn spent(&self) -> impl Iterator<Item = &OutputRef> {
        self.inputs.iter().filter_map(|i| i.fulfills.as_ref())
    }

    pub fn output_ref(&self, index: u32) -> OutputRef {
        OutputRef {
            transaction_id: self.id,
            output_index: index,
        }
    }

    pub fn metadata_str(&self, key: &str) -> Option<&str> {
        self.metadata.as_ref()?.get(key)?.as_str()
    }

    fn seal(mut self, signer: &SigningKeyPair) -> Self {
        let msg = self.signing_bytes();
        for input in &mut self.inputs {
            input.signature = Some(signer.sign(&msg));
        }
        self.id = self.compute_id();
        self
    }
}

/// CREATE signed by `signer` whose single output belongs to `recipient`.
/// A patient creating their own record passes their own key twice; a doctor
/// authoring a prescription names the patient as recipient.
pub fn build_create_tx_for(
    signer: &SigningKeyPair,
    recipient: PublicKey,
    asset_data: Map<String, Value>,
    metadata: Option<Map<String, Value>>,
) -> Transaction {
    Transaction {
        id: Digest::ZERO,
        version: TX_VERSION.into(),
        operation: Operation::Create,
        asset: Asset::Data(asset_data),
        metadata,
        inputs: vec![Input {
            fulfills: None,
            owner: signer.public(),
            signature: None,
        }],
        outputs: vec![Output { owner: recipient }],
    }
    .seal(signer)
}

pub fn build_create_tx(
    owner: &SigningKeyPair,
    asset_data: Map<String, Value>,
    metadata: Option<Map<String, Value>>,
) -> Transaction {
    build_create_tx_for(owner, owner.public(), asset_data, metadata)
}

pub fn build_transfer_tx(
    owner: &SigningKeyPair,
    spent: OutputRef,
    asset_id: Digest,
    recipient: PublicKey,
    metadata: Option<Map<String, Value>>,
) -> Transaction {
    Transaction {
        id: Digest::ZERO,
        version: TX_VERSION.into(),
        operation: Operation::Transfer,
        asset: Asset::Id(asset_id),
        metadata,
        inputs: vec![Input {
            fulfills: Some(spent),
            owner: owner.public(),
            signature: None,
        }],
        outputs: vec![Output { owner: recipient }],
    }
    .seal(owner)
}
