//! Patient-centric record exchange on top of the ledger and content store.
//!
//! A record is an asset lineage. The CREATE carries the record kind in its
//! asset data and, in its metadata, the content id encrypted under the
//! record key plus that key wrapped to each reader's agreement key. Grants
//! and revocations are TRANSFERs from the patient back to the patient, so
//! only the owning patient can sign them. Revocation rotates the record key
//! and re-encrypts the content, leaving the revoked reader's old wrapped key
//! useless against the live ciphertext.
//!
//! Everything about access is read back from the committed chain. The
//! document store only keeps account profiles and lookup pointers.

mod app;
mod audit;
mod docstore;
mod lineage;
mod otp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::NodeError;
use crate::crypto::{AgreementPublic, CryptoError, Digest, PublicKey};
use crate::store::StoreError;

pub use app::{Actor, Ehr, EhrConfig};
pub use audit::{AuditEntry, AuditLog};
pub use docstore::{DocumentStore, FileDocumentStore, MemoryDocumentStore};
pub use lineage::{
    decrypt_cid, open_record, record_state, scan_records, unwrap_record_key, GrantState, KeyEntry,
    LineageAction, RecordMeta, RecordState, RECORD_ASSET_TYPE,
};
pub use otp::{LogOtpSender, MemoryOtpSender, OtpSender, OTP_MAX_ATTEMPTS};

#[derive(Debug, Error)]
pub enum EhrError {
    #[error("an account with email {0} already exists")]
    DuplicateEmail(String),
    #[error("no account for {0}")]
    UnknownAccount(String),
    #[error("no pending registration for {0}")]
    NoPendingRegistration(String),
    #[error("wrong verification code ({remaining} attempts left)")]
    WrongOtp { remaining: u32 },
    #[error("verification locked after too many wrong codes; request a new code")]
    OtpLocked,
    #[error("account {0} is not verified yet")]
    Unverified(String),
    #[error("wrong email or password")]
    WrongCredentials,
    #[error("this action needs a {0} account")]
    WrongRole(Role),
    #[error("only the record owner may do this")]
    NotOwner,
    #[error("access denied")]
    AccessDenied,
    #[error("an active grant for this doctor already exists")]
    DuplicateGrant,
    #[error("no active grant for this doctor on this record")]
    NoActiveGrant,
    #[error("record {0} not found")]
    RecordNotFound(Digest),
    #[error("grant {0} not found")]
    GrantNotFound(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("stored content failed its integrity check: {0}")]
    Integrity(String),
    #[error("document store: {0}")]
    DocumentStore(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Node(#[from] NodeError),
}

impl From<StoreError> for EhrError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::IntegrityMismatch(_) => EhrError::Integrity(e.to_string()),
            other => EhrError::Node(NodeError::Store(other)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Patient,
    Doctor,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Patient => "PATIENT",
            Role::Doctor => "DOCTOR",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientProfile {
    pub first_name: String,
    pub last_name: String,
    pub email: String,
    pub gender: String,
    pub date_of_birth: String,
    pub phone: String,
    /// Kept with the profile; nothing reads it.
    #[serde(default)]
    pub emergency_email: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoctorProfile {
    pub first_name: String,
    pub last_name: String,
    pub email: String,
    pub phone: String,
    pub hospital: String,
    pub qualification: String,
    pub specialization: String,
    pub work_experience: String,
    pub current_workplace: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "UPPERCASE")]
pub enum Profile {
    Patient(PatientProfile),
    Doctor(DoctorProfile),
}

impl Profile {
    pub fn role(&self) -> Role {
        match self {
            Profile::Patient(_) => Role::Patient,
            Profile::Doctor(_) => Role::Doctor,
        }
    }

    pub fn email(&self) -> &str {
        match self {
            Profile::Patient(p) => &p.email,
            Profile::Doctor(d) => &d.email,
        }
    }

    fn email_mut(&mut self) -> &mut String {
        match self {
            Profile::Patient(p) => &mut p.email,
            Profile::Doctor(d) => &mut d.email,
        }
    }

    pub fn display_name(&self) -> String {
        match self {
            Profile::Patient(p) => format!("{} {}", p.first_name, p.last_name),
            Profile::Doctor(d) => format!("Dr. {} {}", d.first_name, d.last_name),
        }
    }

    /// Trims every field, lower-cases the email and checks required fields.
    pub(crate) fn normalize(mut self) -> Result<Self, EhrError> {
        let email = normalize_email(self.email())?;
        *self.email_mut() = email;
        let (first, last) = match &mut self {
            Profile::Patient(p) => {
                for f in [
                    &mut p.first_name,
                    &mut p.last_name,
                    &mut p.gender,
                    &mut p.date_of_birth,
                    &mut p.phone,
                    &mut p.emergency_email,
                ] {
                    *f = f.trim().to_string();
                }
                (&p.first_name, &p.last_name)
            }
            Profile::Doctor(d) => {
                for f in [
                    &mut d.first_name,
                    &mut d.last_name,
                    &mut d.phone,
                    &mut d.hospital,
                    &mut d.qualification,
                    &mut d.specialization,
                    &mut d.work_experience,
                    &mut d.current_workplace,
                ] {
                    *f = f.trim().to_string();
                }
                (&d.first_name, &d.last_name)
            }
        };
        if first.is_empty() || last.is_empty() {
            return Err(EhrError::InvalidInput(
                "first and last name are required".into(),
            ));
        }
        Ok(self)
    }
}

pub fn normalize_email(email: &str) -> Result<String, EhrError> {
    let e = email.trim().to_lowercase();
    match e.split_once('@') {
        Some((user, host)) if !user.is_empty() && host.contains('.') && !e.contains(' ') => Ok(e),
        _ => Err(EhrError::InvalidInput(format!(
            "{email:?} is not an email address"
        ))),
    }
}

/// A verified account. Only public keys are kept here; the secrets live in
/// the key store, sealed under the account password.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub profile: Profile,
    pub verified: bool,
    pub signing_key: PublicKey,
    pub agreement_key: AgreementPublic,
    pub registered_at: u64,
}

impl Account {
    pub fn role(&self) -> Role {
        self.profile.role()
    }

    pub fn email(&self) -> &str {
        self.profile.email()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RecordKind {
    History,
    Lab,
    Radiology,
    Vitals,
    Prescription,
}

impl RecordKind {
    pub const ALL: [RecordKind; 5] = [
        RecordKind::History,
        RecordKind::Lab,
        RecordKind::Radiology,
        RecordKind::Vitals,
        RecordKind::Prescription,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::History => "HISTORY",
            RecordKind::Lab => "LAB",
            RecordKind::Radiology => "RADIOLOGY",
            RecordKind::Vitals => "VITALS",
            RecordKind::Prescription => "PRESCRIPTION",
        }
    }
}

impl std::str::FromStr for RecordKind {
    type Err = EhrError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| EhrError::InvalidInput(format!("unknown record kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GrantStatus {
    Active,
    Revoked,
}

/// What dashboards show about a record: never keys, content ids or content.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub id: Digest,
    pub kind: RecordKind,
    pub owner: PublicKey,
    pub author: PublicKey,
    pub generation: u32,
    pub created_height: u64,
    pub created_at: u64,
    pub updated_height: u64,
    /// Whether the caller can currently fetch the content.
    pub accessible: bool,
    /// Active grantees; filled in for the owner only.
    pub grantees: Vec<PublicKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantSummary {
    pub id: Digest,
    pub record: Digest,
    pub kind: RecordKind,
    pub patient: PublicKey,
    pub grantee: PublicKey,
    pub status: GrantStatus,
    pub granted_height: u64,
    pub revoke_tx: Option<Digest>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrescriptionFields {
    pub views_on_report: String,
    pub special_care: String,
    pub allergies: String,
    pub medicine_suggestions: String,
}

/// The plaintext of a PRESCRIPTION record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prescription {
    pub doctor: PublicKey,
    pub patient: PublicKey,
    pub issued_at: u64,
    #[serde(flatten)]
    pub fields: PrescriptionFields,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalReading {
    pub measure: String,
    pub value: f64,
    pub unit: String,
    pub timestamp: u64,
}

impl VitalReading {
    pub fn validate(&self) -> Result<(), EhrError> {
        if self.measure.trim().is_empty() || self.unit.trim().is_empty() {
            return Err(EhrError::InvalidInput(
                "a reading needs a measure name and a unit".into(),
            ));
        }
        if !self.value.is_finite() {
            return Err(EhrError::InvalidInput(format!(
                "{} value {} is not a finite number",
                self.measure, self.value
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
