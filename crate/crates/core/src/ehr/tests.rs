use std::sync::Arc;

use super::*;
use crate::cluster::{BftCluster, ClusterConfig, LedgerBackend, PowNode};
use crate::crypto::{aes_decrypt, unwrap_key, Ciphertext, MemoryKeyStore};

struct Fixture {
    ehr: Ehr,
    otp: Arc<MemoryOtpSender>,
}

fn fixture_on(ledger: Arc<dyn LedgerBackend>, config: EhrConfig) -> Fixture {
    let otp = Arc::new(MemoryOtpSender::new());
    let ehr = Ehr::new(
        ledger,
        Arc::new(MemoryDocumentStore::new()),
        Arc::new(MemoryKeyStore::new(1_000)),
        otp.clone(),
        AuditLog::in_memory(),
        config,
    );
    Fixture { ehr, otp }
}

fn fixture() -> Fixture {
    fixture_on(Arc::new(PowNode::in_memory(4)), EhrConfig::default())
}

fn patient_profile(email: &str) -> Profile {
    Profile::Patient(PatientProfile {
        first_name: "Asha".into(),
        last_name: "Verma".into(),
        email: email.into(),
        gender: "F".into(),
        date_of_birth: "1990-04-02".into(),
        phone: "+91 98000 00000".into(),
        emergency_email: "kin@example.org".into(),
    })
}

fn doctor_profile(email: &str) -> Profile {
    Profile::Doctor(DoctorProfile {
        first_name: "Ravi".into(),
        last_name: "Menon".into(),
        email: email.into(),
        phone: "+91 98111 11111".into(),
        hospital: "City General".into(),
        qualification: "MD".into(),
        specialization: "Cardiology".into(),
        work_experience: "12 years".into(),
        current_workplace: "City General".into(),
    })
}

const PASSWORD: &str = "correct horse battery";

fn signup(f: &Fixture, profile: Profile) -> Actor {
    let email = profile.email().to_string();
    f.ehr.register(profile, PASSWORD).unwrap();
    let code = f.otp.last_code(&email).unwrap();
    f.ehr.verify_otp(&email, &code).unwrap();
    f.ehr.login(&email, PASSWORD).unwrap()
}

#[test]
fn registration_needs_the_emailed_code() {
    let f = fixture();
    f.ehr
        .register(patient_profile("Asha@Example.org"), PASSWORD)
        .unwrap();
    assert!(matches!(
        f.ehr.login("asha@example.org", PASSWORD),
        Err(EhrError::Unverified(_))
    ));
    let code = f.otp.last_code("asha@example.org").unwrap();
    let account = f.ehr.verify_otp("asha@example.org", &code).unwrap();
    assert!(account.verified);
    assert_eq!(account.email(), "asha@example.org");
    let actor = f.ehr.login("ASHA@example.org", PASSWORD).unwrap();
    assert_eq!(actor.public(), account.signing_key);
    assert!(matches!(
        f.ehr.login("asha@example.org", "wrong password"),
        Err(EhrError::WrongCredentials)
    ));
}

#[test]
fn duplicate_email_is_rejected() {
    let f = fixture();
    signup(&f, patient_profile("a@example.org"));
    assert!(matches!(
        f.ehr.register(doctor_profile("a@example.org"), PASSWORD),
        Err(EhrError::DuplicateEmail(_))
    ));
}

#[test]
fn three_wrong_codes_lock_until_regenerated() {
    let f = fixture();
    f.ehr
        .register(patient_profile("b@example.org"), PASSWORD)
        .unwrap();
    let code = f.otp.last_code("b@example.org").unwrap();
    let wrong = if code == "000000" { "111111" } else { "000000" };
    assert!(matches!(
        f.ehr.verify_otp("b@example.org", wrong),
        Err(EhrError::WrongOtp { remaining: 2 })
    ));
    assert!(matches!(
        f.ehr.verify_otp("b@example.org", wrong),
        Err(EhrError::WrongOtp { remaining: 1 })
    ));
    assert!(matches!(
        f.ehr.verify_otp("b@example.org", wrong),
        Err(EhrError::OtpLocked)
    ));
    assert!(matches!(
        f.ehr.verify_otp("b@example.org", &code),
        Err(EhrError::OtpLocked)
    ));
    f.ehr.regenerate_otp("b@example.org").unwrap();
    let fresh = f.otp.last_code("b@example.org").unwrap();
    f.ehr.verify_otp("b@example.org", &fresh).unwrap();
}

#[test]
fn seeded_codes_repeat() {
    let seeded = || {
        fixture_on(
            Arc::new(PowNode::in_memory(4)),
            EhrConfig {
                otp_seed: Some(7),
                ..EhrConfig::default()
            },
        )
    };
    let (a, b) = (seeded(), seeded());
    for f in [&a, &b] {
        f.ehr
            .register(patient_profile("c@example.org"), PASSWORD)
            .unwrap();
    }
    assert_eq!(
        a.otp.last_code("c@example.org"),
        b.otp.last_code("c@example.org")
    );
}

#[test]
fn owner_round_trip_and_cid_stays_off_chain() {
    let f = fixture();
    let p = signup(&f, patient_profile("p@example.org"));
    let scan: Vec<u8> = (0..2 * 1024 * 1024u32)
        .map(|i| (i * 31 % 251) as u8)
        .collect();
    let rec = f.ehr.add_record(&p, &scan, RecordKind::Radiology).unwrap();
    assert_eq!(f.ehr.fetch_record(&p, &rec.id).unwrap(), scan);

    let state = record_state(&f.ehr.snapshot(), &rec.id).unwrap();
    let key = unwrap_key(
        &state.meta.entry(&p.public()).unwrap().wrapped,
        &p.keys().agreement,
    )
    .unwrap();
    let cid = lineage::decrypt_cid(&state, &key).unwrap();
    let ct = f.ehr.ledger().get_blob(&cid).unwrap();
    assert_ne!(ct, scan);
    assert_eq!(
        aes_decrypt(&key, &Ciphertext::from_bytes(&ct).unwrap()).unwrap(),
        scan
    );

    let mut chain_bytes = Vec::new();
    crate::ledger::write_chain_dump(f.ehr.snapshot().blocks(), &mut chain_bytes).unwrap();
    let text = String::from_utf8(chain_bytes).unwrap();
    assert!(!text.contains(&cid.to_hex()));
}

#[test]
fn grant_fetch_revoke_cycle() {
    let f = fixture();
    let p = signup(&f, patient_profile("p@example.org"));
    let d1 = signup(&f, doctor_profile("d1@example.org"));
    let d2 = signup(&f, doctor_profile("d2@example.org"));
    let rec = f
        .ehr
        .add_record(&p, b"HbA1c 6.1%", RecordKind::Lab)
        .unwrap();

    assert!(f.ehr.list_records(&d1).is_empty());
    assert!(matches!(
        f.ehr.fetch_record(&d1, &rec.id),
        Err(EhrError::AccessDenied)
    ));
    let g1 = f.ehr.grant_access(&p, &d1.public(), &rec.id).unwrap();
    f.ehr.grant_access(&p, &d2.public(), &rec.id).unwrap();
    assert!(matches!(
        f.ehr.grant_access(&p, &d1.public(), &rec.id),
        Err(EhrError::DuplicateGrant)
    ));
    assert_eq!(f.ehr.fetch_record(&d1, &rec.id).unwrap(), b"HbA1c 6.1%");
    assert_eq!(f.ehr.list_records(&d1).len(), 1);

    let old = record_state(&f.ehr.snapshot(), &rec.id).unwrap();
    let old_key = unwrap_key(
        &old.meta.entry(&d1.public()).unwrap().wrapped,
        &d1.keys().agreement,
    )
    .unwrap();

    let (after, revoked) = f.ehr.revoke_grant(&p, &g1.id).unwrap();
    assert_eq!(revoked.status, GrantStatus::Revoked);
    assert_eq!(after.generation, 2);
    assert_eq!(after.grantees, vec![d2.public()]);
    assert!(matches!(
        f.ehr.fetch_record(&d1, &rec.id),
        Err(EhrError::AccessDenied)
    ));
    assert!(f.ehr.list_records(&d1).is_empty());
    assert_eq!(f.ehr.fetch_record(&d2, &rec.id).unwrap(), b"HbA1c 6.1%");
    assert_eq!(f.ehr.fetch_record(&p, &rec.id).unwrap(), b"HbA1c 6.1%");

    let new = record_state(&f.ehr.snapshot(), &rec.id).unwrap();
    let owner_key = unwrap_key(
        &new.meta.entry(&p.public()).unwrap().wrapped,
        &p.keys().agreement,
    )
    .unwrap();
    let live = f
        .ehr
        .ledger()
        .get_blob(&lineage::decrypt_cid(&new, &owner_key).unwrap())
        .unwrap();
    let with_old = aes_decrypt(&old_key, &Ciphertext::from_bytes(&live).unwrap());
    assert!(with_old.map_or(true, |pt| pt != b"HbA1c 6.1%"));
    assert!(new.meta.entry(&d1.public()).is_none());

    assert!(matches!(
        f.ehr.revoke_access(&p, &d1.public(), &rec.id),
        Err(EhrError::NoActiveGrant)
    ));
    assert!(matches!(
        f.ehr.grant_access(&d2, &d1.public(), &rec.id),
        Err(EhrError::WrongRole(Role::Patient))
    ));
}

#[test]
fn non_owner_patient_cannot_grant() {
    let f = fixture();
    let p = signup(&f, patient_profile("p@example.org"));
    let q = signup(&f, patient_profile("q@example.org"));
    let d = signup(&f, doctor_profile("d@example.org"));
    let rec = f
        .ehr
        .add_record(&p, b"x-ray notes", RecordKind::History)
        .unwrap();
    assert!(matches!(
        f.ehr.grant_access(&q, &d.public(), &rec.id),
        Err(EhrError::NotOwner)
    ));
}

#[test]
fn prescriptions_need_a_grant_and_round_trip() {
    let f = fixture();
    let p = signup(&f, patient_profile("p@example.org"));
    let d = signup(&f, doctor_profile("d@example.org"));
    let fields = PrescriptionFields {
        views_on_report: "Mild anaemia; ferritin low.".into(),
        special_care: "Rest, hydrate; review in 2 weeks (µg/dL, naïve)".into(),
        allergies: "Penicillin".into(),
        medicine_suggestions: "Take Paracetamol twice a day\nFerrous sulfate 200 mg".into(),
    };
    assert!(matches!(
        f.ehr.add_prescription(&d, &p.public(), fields.clone()),
        Err(EhrError::AccessDenied)
    ));
    let rec = f.ehr.add_record(&p, b"CBC panel", RecordKind::Lab).unwrap();
    f.ehr.grant_access(&p, &d.public(), &rec.id).unwrap();
    let rx = f
        .ehr
        .add_prescription(&d, &p.public(), fields.clone())
        .unwrap();
    assert_eq!(rx.owner, p.public());
    assert_eq!(rx.author, d.public());

    let seen = f.ehr.fetch_prescription(&p, &rx.id).unwrap();
    assert_eq!(seen.fields, fields);
    assert_eq!(f.ehr.fetch_prescription(&d, &rx.id).unwrap().fields, fields);
    assert!(f.ehr.list_records(&p).iter().any(|r| r.id == rx.id));
    assert!(f.ehr.list_records(&d).iter().any(|r| r.id == rx.id));
}

#[test]
fn vitals_batch_into_one_record() {
    let f = fixture_on(
        Arc::new(PowNode::in_memory(4)),
        EhrConfig {
            vitals_batch: 100,
            ..EhrConfig::default()
        },
    );
    let p = signup(&f, patient_profile("p@example.org"));
    let reading = |i: u64| VitalReading {
        measure: "heart_rate".into(),
        value: 60.0 + (i % 20) as f64,
        unit: "bpm".into(),
        timestamp: 1_700_000_000_000 + i * 1000,
    };
    for i in 0..99 {
        assert!(f.ehr.ingest_vitals(&p, reading(i)).unwrap().is_none());
    }
    let rec = f.ehr.ingest_vitals(&p, reading(99)).unwrap().unwrap();
    assert_eq!(rec.kind, RecordKind::Vitals);
    assert_eq!(f.ehr.list_records(&p).len(), 1);
    let back: Vec<VitalReading> =
        serde_json::from_slice(&f.ehr.fetch_record(&p, &rec.id).unwrap()).unwrap();
    assert_eq!(back.len(), 100);

    let mut bad = reading(0);
    bad.value = f64::NAN;
    assert!(matches!(
        f.ehr.ingest_vitals(&p, bad),
        Err(EhrError::InvalidInput(_))
    ));
    f.ehr.ingest_vitals(&p, reading(1)).unwrap();
    assert!(f.ehr.flush_vitals(&p).unwrap().is_some());
    assert!(f.ehr.flush_vitals(&p).unwrap().is_none());
}

#[test]
fn every_fetch_is_audited_once() {
    let f = fixture();
    let p = signup(&f, patient_profile("p@example.org"));
    let d = signup(&f, doctor_profile("d@example.org"));
    let rec = f.ehr.add_record(&p, b"notes", RecordKind::History).unwrap();
    f.ehr.fetch_record(&p, &rec.id).unwrap();
    f.ehr.fetch_record(&d, &rec.id).unwrap_err();
    f.ehr
        .fetch_record(&d, &crate::crypto::Digest([9; 32]))
        .unwrap_err();
    let fetches: Vec<_> = f
        .ehr
        .audit_log()
        .entries()
        .unwrap()
        .into_iter()
        .filter(|e| e.action == "fetch")
        .collect();
    assert_eq!(fetches.len(), 3);
    assert_eq!(fetches[0].outcome, "ok");
    assert_eq!(fetches[1].outcome, "denied");
    assert!(fetches[2].outcome.starts_with("error"));
}

#[test]
fn corrupted_blob_gives_an_error_not_wrong_plaintext() {
    let dir = tempfile::tempdir().unwrap();
    let node = Arc::new(PowNode::open(dir.path(), 4).unwrap());
    let f = fixture_on(node.clone(), EhrConfig::default());
    let p = signup(&f, patient_profile("p@example.org"));
    let body = vec![7u8; 5000];
    let rec = f.ehr.add_record(&p, &body, RecordKind::Lab).unwrap();
    let blobs = dir.path().join(crate::cluster::STORE_DIR);
    let mut flipped = 0;
    for entry in walk(&blobs) {
        let mut bytes = std::fs::read(&entry).unwrap();
        if bytes.len() > 4000 {
            bytes[100] ^= 1;
            std::fs::write(&entry, bytes).unwrap();
            flipped += 1;
        }
    }
    assert_eq!(flipped, 1);
    assert!(matches!(
        f.ehr.fetch_record(&p, &rec.id),
        Err(EhrError::Integrity(_))
    ));
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn records_list_in_creation_order_on_a_bft_cluster() {
    let cluster = Arc::new(BftCluster::in_memory(ClusterConfig::default()).unwrap());
    let f = fixture_on(cluster, EhrConfig::default());
    let p = signup(&f, patient_profile("p@example.org"));
    let kinds = [RecordKind::History, RecordKind::Lab, RecordKind::Radiology];
    let ids: Vec<_> = kinds
        .iter()
        .map(|k| f.ehr.add_record(&p, k.as_str().as_bytes(), *k).unwrap().id)
        .collect();
    let listed: Vec<_> = f.ehr.list_records(&p).into_iter().map(|r| r.id).collect();
    assert_eq!(listed, ids);
}
