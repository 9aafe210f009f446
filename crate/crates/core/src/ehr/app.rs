use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::rngs::OsRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::audit::{AuditEntry, AuditLog};
use super::docstore::DocumentStore;
use super::lineage::{
    asset_data, open_record, record_state, scan_records, unwrap_record_key, KeyEntry,
    LineageAction, RecordMeta, RecordState,
};
use super::otp::{OtpSender, OtpState};
use super::{
    normalize_email, Account, EhrError, GrantStatus, GrantSummary, Prescription,
    PrescriptionFields, Profile, RecordKind, RecordSummary, Role, VitalReading,
};
use crate::cluster::{now_ms, LedgerBackend, NodeError};
use crate::crypto::{
    aes_encrypt, wrap_key, AgreementPublic, Digest, KeyBundle, KeyStore, PublicKey, SymmetricKey,
};
use crate::ledger::{build_create_tx_for, build_transfer_tx, ChainState, Transaction};

const ACCOUNTS: &str = "accounts";
const ACCOUNT_KEYS: &str = "account_keys";
const GRANTS: &str = "grants";
const MIN_PASSWORD_LEN: usize = 8;
const SUBMIT_ATTEMPTS: usize = 3;

#[derive(Clone, Debug)]
pub struct EhrConfig {
    /// Vital readings buffered per patient before they become one record.
    pub vitals_batch: usize,
    /// Fixes the sequence of one-time codes, for scripted and test runs.
    pub otp_seed: Option<u64>,
}

impl Default for EhrConfig {
    fn default() -> Self {
        Self {
            vitals_batch: 1,
            otp_seed: None,
        }
    }
}

/// A logged-in account with its unlocked keys. Lives in memory only.
#[derive(Clone)]
pub struct Actor {
    pub account: Account,
    keys: KeyBundle,
}

impl std::fmt::Debug for Actor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Actor")
            .field("email", &self.account.email())
            .field("role", &self.account.role())
            .finish_non_exhaustive()
    }
}

impl Actor {
    pub fn public(&self) -> PublicKey {
        self.keys.signing_public()
    }

    pub fn role(&self) -> Role {
        self.account.role()
    }

    pub fn keys(&self) -> &KeyBundle {
        &self.keys
    }

    fn require(&self, role: Role) -> Result<(), EhrError> {
        if self.role() != role {
            return Err(EhrError::WrongRole(role));
        }
        Ok(())
    }
}

struct Pending {
    profile: Profile,
    password: String,
    otp: OtpState,
}

#[derive(Serialize, Deserialize)]
struct GrantPointer {
    record: Digest,
    patient: PublicKey,
    grantee: PublicKey,
}

pub struct Ehr {
    ledger: Arc<dyn LedgerBackend>,
    docs: Arc<dyn DocumentStore>,
    keystore: Arc<dyn KeyStore>,
    otp_sender: Arc<dyn OtpSender>,
    audit: AuditLog,
    config: EhrConfig,
    pending: Mutex<HashMap<String, Pending>>,
    otp_rng: Mutex<ChaCha8Rng>,
    vitals: Mutex<HashMap<PublicKey, Vec<VitalReading>>>,
    accounts_lock: Mutex<()>,
}

fn docs_err(e: serde_json::Error) -> EhrError {
    EhrError::DocumentStore(e.to_string())
}

impl Ehr {
    pub fn new(
        ledger: Arc<dyn LedgerBackend>,
        docs: Arc<dyn DocumentStore>,
        keystore: Arc<dyn KeyStore>,
        otp_sender: Arc<dyn OtpSender>,
        audit: AuditLog,
        config: EhrConfig,
    ) -> Self {
        let rng = match config.otp_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_rng(OsRng).expect("os rng"),
        };
        Self {
            ledger,
            docs,
            keystore,
            otp_sender,
            audit,
            config,
            pending: Mutex::new(HashMap::new()),
            otp_rng: Mutex::new(rng),
            vitals: Mutex::new(HashMap::new()),
            accounts_lock: Mutex::new(()),
        }
    }

    pub fn ledger(&self) -> &Arc<dyn LedgerBackend> {
        &self.ledger
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn snapshot(&self) -> Arc<ChainState> {
        self.ledger.snapshot()
    }

    // ---- accounts ----

    fn new_code(&self) -> String {
        let n: u32 = self
            .otp_rng
            .lock()
            .expect("otp rng")
            .gen_range(0..1_000_000);
        format!("{n:06}")
    }

    /// Starts a registration. Nothing is persisted until the emailed code
    /// is confirmed.
    pub fn register(&self, profile: Profile, password: &str) -> Result<(), EhrError> {
        let profile = profile.normalize()?;
        if password.chars().count() < MIN_PASSWORD_LEN {
            return Err(EhrError::InvalidInput(format!(
                "password must have at least {MIN_PASSWORD_LEN} characters"
            )));
        }
        let email = profile.email().to_string();
        let _guard = self.accounts_lock.lock().expect("accounts lock");
        if self.account(&email)?.is_some() {
            return Err(EhrError::DuplicateEmail(email));
        }
        let mut pending = self.pending.lock().expect("pending lock");
        if pending.contains_key(&email) {
            return Err(EhrError::DuplicateEmail(email));
        }
        let code = self.new_code();
        self.otp_sender.send(&email, &code)?;
        pending.insert(
            email,
            Pending {
                profile,
                password: password.to_string(),
                otp: OtpState::new(code),
            },
        );
        Ok(())
    }

    /// Issues a fresh code and clears the failure count.
    pub fn regenerate_otp(&self, email: &str) -> Result<(), EhrError> {
        let email = normalize_email(email)?;
        let mut pending = self.pending.lock().expect("pending lock");
        let p = pending
            .get_mut(&email)
            .ok_or_else(|| EhrError::NoPendingRegistration(email.clone()))?;
        let code = self.new_code();
        self.otp_sender.send(&email, &code)?;
        p.otp = OtpState::new(code);
        Ok(())
    }

    /// Confirms the code, generates the account keys and persists the
    /// account with its key file sealed under the password.
    pub fn verify_otp(&self, email: &str, code: &str) -> Result<Account, EhrError> {
        let email = normalize_email(email)?;
        let _guard = self.accounts_lock.lock().expect("accounts lock");
        let mut pending = self.pending.lock().expect("pending lock");
        let p = pending
            .get_mut(&email)
            .ok_or_else(|| EhrError::NoPendingRegistration(email.clone()))?;
        p.otp.check(code)?;
        let p = pending.remove(&email).expect("present");
        drop(pending);

        let keys = KeyBundle::generate(&mut OsRng);
        self.keystore.store(&email, &keys, &p.password)?;
        let account = Account {
            profile: p.profile,
            verified: true,
            signing_key: keys.signing_public(),
            agreement_key: keys.agreement_public(),
            registered_at: now_ms(),
        };
        self.docs.put(
            ACCOUNTS,
            &email,
            &serde_json::to_value(&account).map_err(docs_err)?,
        )?;
        self.docs.put(
            ACCOUNT_KEYS,
            &account.signing_key.to_hex(),
            &serde_json::Value::from(email),
        )?;
        Ok(account)
    }

    pub fn account(&self, email: &str) -> Result<Option<Account>, EhrError> {
        let email = normalize_email(email)?;
        self.docs
            .get(ACCOUNTS, &email)?
            .map(|v| serde_json::from_value(v).map_err(docs_err))
            .transpose()
    }

    pub fn account_by_key(&self, key: &PublicKey) -> Result<Option<Account>, EhrError> {
        match self.docs.get(ACCOUNT_KEYS, &key.to_hex())? {
            Some(serde_json::Value::String(email)) => self.account(&email),
            _ => Ok(None),
        }
    }

    pub fn accounts(&self) -> Result<Vec<Account>, EhrError> {
        self.docs
            .list(ACCOUNTS)?
            .into_iter()
            .map(|(_, v)| serde_json::from_value(v).map_err(docs_err))
            .collect()
    }

    /// Unlocks the account's key file with `password`.
    pub fn login(&self, email: &str, password: &str) -> Result<Actor, EhrError> {
        let email = normalize_email(email).map_err(|_| EhrError::WrongCredentials)?;
        let Some(account) = self.account(&email)? else {
            if self
                .pending
                .lock()
                .expect("pending lock")
                .contains_key(&email)
            {
                return Err(EhrError::Unverified(email));
            }
            return Err(EhrError::WrongCredentials);
        };
        if !account.verified {
            return Err(EhrError::Unverified(email));
        }
        let keys = self
            .keystore
            .load(&email, password)
            .map_err(|_| EhrError::WrongCredentials)?;
        if keys.signing_public() != account.signing_key {
            return Err(EhrError::Integrity(format!(
                "key file for {email} does not match the account"
            )));
        }
        Ok(Actor { account, keys })
    }

    fn agreement_of(&self, who: &PublicKey, role: Role) -> Result<AgreementPublic, EhrError> {
        let account = self
            .account_by_key(who)?
            .ok_or_else(|| EhrError::UnknownAccount(who.to_hex()))?;
        if account.role() != role {
            return Err(EhrError::WrongRole(role));
        }
        Ok(account.agreement_key)
    }

    // ---- ledger plumbing ----

    fn submit(&self, tx: Transaction) -> Result<(), EhrError> {
        let mut last = None;
        for _ in 0..SUBMIT_ATTEMPTS {
            match self.ledger.submit(tx.clone()) {
                Ok(_) => return Ok(()),
                Err(NodeError::Stalled) => last = Some(NodeError::Stalled),
                Err(e) => return Err(e.into()),
            }
        }
        Err(last.expect("at least one attempt").into())
    }

    fn state(&self, record: &Digest) -> Result<RecordState, EhrError> {
        record_state(&self.snapshot(), record).ok_or(EhrError::RecordNotFound(*record))
    }

    fn seal_content(
        &self,
        plaintext: &[u8],
        readers: &[(PublicKey, AgreementPublic)],
    ) -> Result<(String, BTreeMap<String, KeyEntry>), EhrError> {
        let key = SymmetricKey::generate(&mut OsRng);
        let cid = self
            .ledger
            .put_blob(&aes_encrypt(&key, plaintext).to_bytes())?;
        let enc_cid = hex::encode(aes_encrypt(&key, cid.0.as_bytes()).to_bytes());
        let mut keys = BTreeMap::new();
        for (who, agreement) in readers {
            keys.insert(
                who.to_hex(),
                KeyEntry {
                    agreement: *agreement,
                    wrapped: wrap_key(&key, agreement)?,
                },
            );
        }
        Ok((enc_cid, keys))
    }

    fn create_record(
        &self,
        author: &Actor,
        patient: (PublicKey, AgreementPublic),
        kind: RecordKind,
        plaintext: &[u8],
    ) -> Result<RecordState, EhrError> {
        let mut readers = vec![patient];
        if author.public() != patient.0 {
            readers.push((author.public(), author.keys.agreement_public()));
        }
        let (enc_cid, keys) = self.seal_content(plaintext, &readers)?;
        let meta = RecordMeta {
            action: LineageAction::Create,
            kind,
            generation: 1,
            author: author.public(),
            grantee: (author.public() != patient.0).then(|| author.public()),
            enc_cid,
            keys,
        };
        let tx = build_create_tx_for(
            &author.keys.signing,
            patient.0,
            asset_data(kind),
            Some(meta.to_metadata()),
        );
        let id = tx.id;
        self.submit(tx)?;
        if author.public() != patient.0 {
            self.index_grant(&id, &id, &patient.0, &author.public())?;
        }
        self.state(&id)
    }

    fn index_grant(
        &self,
        grant: &Digest,
        record: &Digest,
        patient: &PublicKey,
        grantee: &PublicKey,
    ) -> Result<(), EhrError> {
        let ptr = GrantPointer {
            record: *record,
            patient: *patient,
            grantee: *grantee,
        };
        self.docs.put(
            GRANTS,
            &grant.to_hex(),
            &serde_json::to_value(ptr).map_err(docs_err)?,
        )
    }

    fn audit(&self, caller: &PublicKey, record: &Digest, action: &str, outcome: String) {
        let entry = AuditEntry {
            timestamp: now_ms(),
            caller: caller.to_hex(),
            record: record.to_hex(),
            action: action.into(),
            outcome,
        };
        if let Err(e) = self.audit.append(entry) {
            log::error!("audit log write failed: {e}");
        }
    }

    fn summary(&self, state: &RecordState, caller: &PublicKey) -> RecordSummary {
        RecordSummary {
            id: state.id,
            kind: state.kind,
            owner: state.owner,
            author: state.author,
            generation: state.generation(),
            created_height: state.created_height,
            created_at: state.created_at,
            updated_height: state.updated_height,
            accessible: state.can_read(caller),
            grantees: if state.owner == *caller {
                state.active_grantees()
            } else {
                Vec::new()
            },
        }
    }

    // ---- records ----

    /// Encrypts `plaintext` under a fresh key, stores the ciphertext and
    /// commits a CREATE owned by the patient.
    pub fn add_record(
        &self,
        patient: &Actor,
        plaintext: &[u8],
        kind: RecordKind,
    ) -> Result<RecordSummary, EhrError> {
        patient.require(Role::Patient)?;
        if kind == RecordKind::Prescription {
            return Err(EhrError::InvalidInput(
                "prescriptions are written by doctors".into(),
            ));
        }
        let me = (patient.public(), patient.keys.agreement_public());
        let state = self.create_record(patient, me, kind, plaintext)?;
        Ok(self.summary(&state, &patient.public()))
    }

    /// A doctor uploads clinical data for a patient whose records they can
    /// read. The record belongs to the patient; the author keeps read access.
    pub fn add_record_for(
        &self,
        doctor: &Actor,
        patient: &PublicKey,
        plaintext: &[u8],
        kind: RecordKind,
    ) -> Result<RecordSummary, EhrError> {
        doctor.require(Role::Doctor)?;
        if kind == RecordKind::Prescription {
            return Err(EhrError::InvalidInput(
                "use the prescription endpoint for prescriptions".into(),
            ));
        }
        self.author_for_patient(doctor, patient, kind, plaintext)
    }

    fn author_for_patient(
        &self,
        doctor: &Actor,
        patient: &PublicKey,
        kind: RecordKind,
        plaintext: &[u8],
    ) -> Result<RecordSummary, EhrError> {
        let agreement = self.agreement_of(patient, Role::Patient)?;
        if !self.has_active_grant_from(&doctor.public(), patient) {
            return Err(EhrError::AccessDenied);
        }
        let state = self.create_record(doctor, (*patient, agreement), kind, plaintext)?;
        Ok(self.summary(&state, &doctor.public()))
    }

    fn has_active_grant_from(&self, doctor: &PublicKey, patient: &PublicKey) -> bool {
        scan_records(&self.snapshot())
            .iter()
            .any(|r| r.owner == *patient && r.active_grant(doctor).is_some())
    }

    /// Buffers one reading; returns the VITALS record once a batch is full.
    pub fn ingest_vitals(
        &self,
        patient: &Actor,
        reading: VitalReading,
    ) -> Result<Option<RecordSummary>, EhrError> {
        patient.require(Role::Patient)?;
        reading.validate()?;
        let batch = {
            let mut buffers = self.vitals.lock().expect("vitals lock");
            let buf = buffers.entry(patient.public()).or_default();
            buf.push(reading);
            if buf.len() < self.config.vitals_batch.max(1) {
                return Ok(None);
            }
            std::mem::take(buf)
        };
        self.commit_vitals(patient, batch).map(Some)
    }

    /// Commits whatever readings are buffered for the patient.
    pub fn flush_vitals(&self, patient: &Actor) -> Result<Option<RecordSummary>, EhrError> {
        patient.require(Role::Patient)?;
        let batch = self
            .vitals
            .lock()
            .expect("vitals lock")
            .remove(&patient.public())
            .unwrap_or_default();
        if batch.is_empty() {
            return Ok(None);
        }
        self.commit_vitals(patient, batch).map(Some)
    }

    pub fn buffered_vitals(&self, patient: &PublicKey) -> usize {
        self.vitals
            .lock()
            .expect("vitals lock")
            .get(patient)
            .map_or(0, Vec::len)
    }

    fn commit_vitals(
        &self,
        patient: &Actor,
        batch: Vec<VitalReading>,
    ) -> Result<RecordSummary, EhrError> {
        let bytes =
            serde_json::to_vec(&batch).map_err(|e| EhrError::InvalidInput(e.to_string()))?;
        self.add_record(patient, &bytes, RecordKind::Vitals)
    }

    /// Decrypts a record for `caller`. Every attempt is audited.
    pub fn fetch_record(&self, caller: &Actor, record: &Digest) -> Result<Vec<u8>, EhrError> {
        let result = self.fetch_inner(caller, record);
        let outcome = match &result {
            Ok(_) => "ok".to_string(),
            Err(EhrError::AccessDenied) => "denied".to_string(),
            Err(e) => format!("error: {e}"),
        };
        self.audit(&caller.public(), record, "fetch", outcome);
        result
    }

    fn fetch_inner(&self, caller: &Actor, record: &Digest) -> Result<Vec<u8>, EhrError> {
        let state = self.state(record)?;
        if !state.can_read(&caller.public()) {
            return Err(EhrError::AccessDenied);
        }
        open_record(self.ledger.as_ref(), &state, &caller.keys)
    }

    pub fn fetch_prescription(
        &self,
        caller: &Actor,
        record: &Digest,
    ) -> Result<Prescription, EhrError> {
        let bytes = self.fetch_record(caller, record)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| EhrError::InvalidInput(format!("not a prescription: {e}")))
    }

    // ---- grants ----

    pub fn grant_access(
        &self,
        patient: &Actor,
        doctor: &PublicKey,
        record: &Digest,
    ) -> Result<GrantSummary, EhrError> {
        patient.require(Role::Patient)?;
        let state = self.state(record)?;
        if state.owner != patient.public() {
            return Err(EhrError::NotOwner);
        }
        let agreement = self.agreement_of(doctor, Role::Doctor)?;
        if state.active_grant(doctor).is_some() {
            return Err(EhrError::DuplicateGrant);
        }
        let key = unwrap_record_key(&state, &patient.keys)?;
        let mut meta = state.meta.clone();
        meta.keys.insert(
            doctor.to_hex(),
            KeyEntry {
                agreement,
                wrapped: wrap_key(&key, &agreement)?,
            },
        );
        meta.action = LineageAction::Grant;
        meta.grantee = Some(*doctor);
        let tx = build_transfer_tx(
            &patient.keys.signing,
            state.head,
            state.id,
            patient.public(),
            Some(meta.to_metadata()),
        );
        let id = tx.id;
        self.submit(tx)?;
        self.index_grant(&id, record, &patient.public(), doctor)?;
        self.audit(&patient.public(), record, "grant", "ok".into());
        let state = self.state(record)?;
        Ok(grant_summary(&state, &id).expect("grant just committed"))
    }

    /// Revokes `doctor` and rotates the record key: the content is
    /// re-encrypted under a fresh key, stored under a new content id, and the
    /// new key is wrapped only to the owner and the remaining grantees.
    pub fn revoke_access(
        &self,
        patient: &Actor,
        doctor: &PublicKey,
        record: &Digest,
    ) -> Result<(RecordSummary, GrantSummary), EhrError> {
        patient.require(Role::Patient)?;
        let state = self.state(record)?;
        if state.owner != patient.public() {
            return Err(EhrError::NotOwner);
        }
        let grant = state
            .active_grant(doctor)
            .ok_or(EhrError::NoActiveGrant)?
            .id;
        let plaintext = open_record(self.ledger.as_ref(), &state, &patient.keys)?;
        let readers: Vec<(PublicKey, AgreementPublic)> = std::iter::once(state.owner)
            .chain(state.active_grantees().into_iter().filter(|g| g != doctor))
            .map(|who| {
                state
                    .meta
                    .entry(&who)
                    .map(|e| (who, e.agreement))
                    .ok_or_else(|| EhrError::Integrity(format!("no key entry for {who}")))
            })
            .collect::<Result<_, _>>()?;
        let (enc_cid, keys) = self.seal_content(&plaintext, &readers)?;
        let meta = RecordMeta {
            action: LineageAction::Revoke,
            kind: state.kind,
            generation: state.generation() + 1,
            author: state.author,
            grantee: Some(*doctor),
            enc_cid,
            keys,
        };
        let tx = build_transfer_tx(
            &patient.keys.signing,
            state.head,
            state.id,
            patient.public(),
            Some(meta.to_metadata()),
        );
        self.submit(tx)?;
        self.audit(&patient.public(), record, "revoke", "ok".into());
        let state = self.state(record)?;
        let summary = self.summary(&state, &patient.public());
        Ok((
            summary,
            grant_summary(&state, &grant).expect("grant exists"),
        ))
    }

    /// Revokes by grant id, as listed by [`Ehr::list_grants`].
    pub fn revoke_grant(
        &self,
        patient: &Actor,
        grant: &Digest,
    ) -> Result<(RecordSummary, GrantSummary), EhrError> {
        let ptr: GrantPointer = self
            .docs
            .get(GRANTS, &grant.to_hex())?
            .map(|v| serde_json::from_value(v).map_err(docs_err))
            .transpose()?
            .ok_or_else(|| EhrError::GrantNotFound(grant.to_hex()))?;
        if ptr.patient != patient.public() {
            return Err(EhrError::GrantNotFound(grant.to_hex()));
        }
        let state = self.state(&ptr.record)?;
        match grant_summary(&state, grant) {
            Some(g) if g.status == GrantStatus::Active => {
                self.revoke_access(patient, &ptr.grantee, &ptr.record)
            }
            Some(_) => Err(EhrError::NoActiveGrant),
            None => Err(EhrError::GrantNotFound(grant.to_hex())),
        }
    }

    // ---- prescriptions ----

    pub fn add_prescription(
        &self,
        doctor: &Actor,
        patient: &PublicKey,
        fields: PrescriptionFields,
    ) -> Result<RecordSummary, EhrError> {
        doctor.require(Role::Doctor)?;
        let rx = Prescription {
            doctor: doctor.public(),
            patient: *patient,
            issued_at: now_ms(),
            fields,
        };
        let bytes = serde_json::to_vec(&rx).map_err(|e| EhrError::InvalidInput(e.to_string()))?;
        self.author_for_patient(doctor, patient, RecordKind::Prescription, &bytes)
    }

    // ---- dashboards ----

    /// Patients: every owned record. Doctors: records they can read plus
    /// the prescriptions they wrote. Ordered by creation height, then
    /// position in the block.
    pub fn list_records(&self, caller: &Actor) -> Vec<RecordSummary> {
        let me = caller.public();
        scan_records(&self.snapshot())
            .iter()
            .filter(|r| match caller.role() {
                Role::Patient => r.owner == me,
                Role::Doctor => {
                    r.active_grant(&me).is_some()
                        || (r.kind == RecordKind::Prescription && r.author == me)
                }
            })
            .map(|r| self.summary(r, &me))
            .collect()
    }

    /// Patients: grants on their records. Doctors: grants made to them.
    pub fn list_grants(&self, caller: &Actor) -> Vec<GrantSummary> {
        let me = caller.public();
        let mut out = Vec::new();
        for r in scan_records(&self.snapshot()) {
            for g in &r.grants {
                let mine = match caller.role() {
                    Role::Patient => r.owner == me,
                    Role::Doctor => g.grantee == me,
                };
                if mine {
                    out.push(to_summary(&r, g));
                }
            }
        }
        out
    }

    pub fn record_summary(
        &self,
        caller: &Actor,
        record: &Digest,
    ) -> Result<RecordSummary, EhrError> {
        let state = self.state(record)?;
        let me = caller.public();
        let visible =
            state.owner == me || state.grants.iter().any(|g| g.grantee == me) || state.author == me;
        if !visible {
            return Err(EhrError::AccessDenied);
        }
        Ok(self.summary(&state, &me))
    }
}

fn to_summary(r: &RecordState, g: &super::lineage::GrantState) -> GrantSummary {
    GrantSummary {
        id: g.id,
        record: r.id,
        kind: r.kind,
        patient: r.owner,
        grantee: g.grantee,
        status: g.status,
        granted_height: g.granted_height,
        revoke_tx: g.revoke_tx,
    }
}

fn grant_summary(state: &RecordState, id: &Digest) -> Option<GrantSummary> {
    state
        .grants
        .iter()
        .find(|g| g.id == *id)
        .map(|g| to_summary(state, g))
}
