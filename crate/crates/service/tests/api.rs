use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ehrchain_core::crypto::{Digest, PublicKey};
use ehrchain_core::ehr::{record_state, DocumentStore, FileDocumentStore, MemoryOtpSender};
use ehrchain_core::ledger::build_transfer_tx;
use ehrchain_service::{router, AppState, LedgerMode, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    state: AppState,
    otp: Arc<MemoryOtpSender>,
}

fn config() -> ServiceConfig {
    ServiceConfig {
        kdf_iterations: 1_000,
        block_time_ms: 20,
        ..ServiceConfig::default()
    }
}

fn api(config: &ServiceConfig) -> Api {
    let otp = Arc::new(MemoryOtpSender::new());
    let state = AppState::build_with_otp(config, otp.clone()).unwrap();
    Api {
        app: router(state.clone()),
        state,
        otp,
    }
}

impl Api {
    async fn call(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| panic!("non-JSON body: {}", String::from_utf8_lossy(&bytes)))
        };
        (status, value)
    }

    async fn post(&self, uri: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, token, Some(body)).await
    }

    async fn get(&self, uri: &str, token: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, Some(token), None).await
    }

    async fn signup(&self, profile: Value) -> String {
        let email = profile["email"].as_str().unwrap().to_string();
        let (s, v) = self
            .post(
                "/register",
                None,
                json!({"profile": profile, "password": "s3cret-pass"}),
            )
            .await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let code = self.otp.last_code(&email).unwrap();
        let (s, v) = self
            .post("/verify-otp", None, json!({"email": email, "code": code}))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["verified"], true);
        self.login(&email).await
    }

    async fn login(&self, email: &str) -> String {
        let (s, v) = self
            .post(
                "/login",
                None,
                json!({"email": email, "password": "s3cret-pass"}),
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["token"].as_str().unwrap().to_string()
    }
}

fn patient(email: &str) -> Value {
    json!({
        "role": "PATIENT", "first_name": "Asha", "last_name": "Verma", "email": email,
        "gender": "F", "date_of_birth": "1990-04-02", "phone": "+91 98000 00000",
        "emergency_email": "kin@example.org"
    })
}

fn doctor(email: &str) -> Value {
    json!({
        "role": "DOCTOR", "first_name": "Ravi", "last_name": "Menon", "email": email,
        "phone": "+91 98111 11111", "hospital": "City General", "qualification": "MD",
        "specialization": "Cardiology", "work_experience": "12 years",
        "current_workplace": "City General"
    })
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
}

#[tokio::test(flavor = "multi_thread")]
async fn happy_path_from_signup_to_doctor_fetch() {
    let api = api(&config());
    let p = api.signup(patient("asha@example.org")).await;
    let d = api.signup(doctor("ravi@example.org")).await;

    let (s, v) = api.get("/records", &d).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([]));

    let content = b"Lipid panel: LDL 96 mg/dL".to_vec();
    let (s, rec) = api
        .post(
            "/records",
            Some(&p),
            json!({"kind": "LAB", "content_base64": B64.encode(&content)}),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{rec}");
    let id = rec["id"].as_str().unwrap().to_string();
    assert_eq!(rec["kind"], "LAB");
    assert!(rec.get("content_base64").is_none());

    let (s, v) = api.get(&format!("/records/{id}"), &d).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_error(&v, "access_denied");

    let (s, g) = api
        .post(
            "/grants",
            Some(&p),
            json!({"record": id, "doctor": "ravi@example.org"}),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{g}");
    assert_eq!(g["status"], "ACTIVE");

    let (s, v) = api.get(&format!("/records/{id}"), &d).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(
        B64.decode(v["content_base64"].as_str().unwrap()).unwrap(),
        content
    );
    let (_, list) = api.get("/records", &d).await;
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (s, rx) = api
        .post(
            "/prescriptions",
            Some(&d),
            json!({
                "patient": "asha@example.org",
                "views_on_report": "LDL within range",
                "special_care": "Walk 30 minutes daily",
                "allergies": "None known",
                "medicine_suggestions": "Take Paracetamol twice a day"
            }),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{rx}");
    let (s, v) = api
        .get(&format!("/records/{}", rx["id"].as_str().unwrap()), &p)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        v["prescription"]["medicine_suggestions"],
        "Take Paracetamol twice a day"
    );

    let (s, grants) = api.get("/grants", &p).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(grants.as_array().unwrap().len(), 2);

    let gid = g["id"].as_str().unwrap();
    let (s, v) = api
        .call(Method::DELETE, &format!("/grants/{gid}"), Some(&p), None)
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["grant"]["status"], "REVOKED");
    assert_eq!(v["record"]["generation"], 2);
    let (s, _) = api.get(&format!("/records/{id}"), &d).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (_, list) = api.get("/records", &d).await;
    let ids: Vec<&str> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_str().unwrap())
        .collect();
    assert!(!ids.contains(&id.as_str()));

    let (s, v) = api
        .call(Method::DELETE, &format!("/grants/{gid}"), Some(&p), None)
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v, "no_active_grant");
}

#[tokio::test(flavor = "multi_thread")]
async fn chain_endpoints_show_heights_hashes_and_counts() {
    let api = api(&config());
    let p = api.signup(patient("p@example.org")).await;
    for kind in ["HISTORY", "RADIOLOGY"] {
        let (s, _) = api
            .post(
                "/records",
                Some(&p),
                json!({"kind": kind, "content_base64": B64.encode(kind)}),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED);
    }
    let (s, blocks) = api.call(Method::GET, "/chain/blocks", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let blocks = blocks.as_array().unwrap();
    assert_eq!(blocks.len(), 3);
    for (h, b) in blocks.iter().enumerate() {
        assert_eq!(b["height"], h);
        assert_eq!(b["hash"].as_str().unwrap().len(), 64);
    }
    assert_eq!(blocks[1]["tx_count"], 1);
    assert_eq!(blocks[1]["prev_hash"], blocks[0]["hash"]);
    assert_eq!(blocks[2]["certified"], true);

    let (s, b) = api.call(Method::GET, "/chain/blocks/2", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["block"]["txs"].as_array().unwrap().len(), 1);
    let (s, v) = api.call(Method::GET, "/chain/blocks/99", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_expire_and_close() {
    let api = api(&ServiceConfig {
        session_ttl: Duration::from_millis(150),
        ..config()
    });
    let p = api.signup(patient("p@example.org")).await;
    let (s, _) = api.get("/me", &p).await;
    assert_eq!(s, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(250)).await;
    let (s, v) = api.get("/records", &p).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_error(&v, "session_expired");

    let p = api.login("p@example.org").await;
    let (s, _) = api.call(Method::POST, "/logout", Some(&p), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, v) = api.get("/me", &p).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_error(&v, "unauthenticated");

    let (s, v) = api.call(Method::GET, "/records", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_error(&v, "unauthenticated");
}

#[tokio::test(flavor = "multi_thread")]
async fn credential_and_validation_errors() {
    let api = api(&config());
    api.signup(patient("p@example.org")).await;
    let (s, v) = api
        .post(
            "/login",
            None,
            json!({"email": "p@example.org", "password": "not-the-pass"}),
        )
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_error(&v, "wrong_credentials");
    let (s, v) = api
        .post(
            "/login",
            None,
            json!({"email": "nobody@example.org", "password": "s3cret-pass"}),
        )
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_error(&v, "wrong_credentials");

    let (s, v) = api
        .post(
            "/register",
            None,
            json!({"profile": patient("p@example.org"), "password": "s3cret-pass"}),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v, "duplicate_email");

    let (s, _) = api
        .post(
            "/register",
            None,
            json!({"profile": patient("new@example.org"), "password": "s3cret-pass"}),
        )
        .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, v) = api
        .post(
            "/login",
            None,
            json!({"email": "new@example.org", "password": "s3cret-pass"}),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_error(&v, "unverified");
    let (s, v) = api
        .post(
            "/verify-otp",
            None,
            json!({"email": "new@example.org", "code": "abc"}),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "wrong_otp");
    let (s, _) = api
        .post("/resend-otp", None, json!({"email": "new@example.org"}))
        .await;
    assert_eq!(s, StatusCode::ACCEPTED);

    let (s, v) = api.post("/register", None, json!({"password": 3})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_input");

    let p = api.login("p@example.org").await;
    let (s, v) = api
        .post(
            "/records",
            Some(&p),
            json!({"kind": "LAB", "content_base64": "@@not base64@@"}),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_input");
    let (s, v) = api.get("/records/zz", &p).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_input");
    let (s, v) = api.get(&format!("/records/{}", "ab".repeat(32)), &p).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "record_not_found");
}

#[tokio::test(flavor = "multi_thread")]
async fn vitals_endpoint_batches_and_rejects_bad_readings() {
    let api = api(&ServiceConfig {
        vitals_batch: 3,
        ..config()
    });
    let p = api.signup(patient("p@example.org")).await;
    let r = |v: f64| json!({"measure": "spo2", "value": v, "unit": "%", "timestamp": 1});
    let (s, v) = api
        .post("/vitals", Some(&p), json!({"readings": [r(97.0), r(98.0)]}))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["records"], json!([]));
    assert_eq!(v["buffered"], 2);
    let (s, v) = api
        .post("/vitals", Some(&p), json!({"readings": [r(99.0)]}))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["records"][0]["kind"], "VITALS");
    assert_eq!(v["buffered"], 0);
    let (s, v) = api
        .post(
            "/vitals",
            Some(&p),
            json!({"readings": [{"measure": "", "value": 1.0, "unit": "%", "timestamp": 1}]}),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_input");
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_keeps_accounts_records_and_grants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..config()
    };
    let (rec_id, old_token) = {
        let api = api(&cfg);
        let p = api.signup(patient("p@example.org")).await;
        api.signup(doctor("d@example.org")).await;
        let (_, rec) = api
            .post(
                "/records",
                Some(&p),
                json!({"kind": "HISTORY", "content_base64": B64.encode("asthma since 2009")}),
            )
            .await;
        let id = rec["id"].as_str().unwrap().to_string();
        let (s, _) = api
            .post(
                "/grants",
                Some(&p),
                json!({"record": id, "doctor": "d@example.org"}),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED);
        (id, p)
    };

    let api = api(&cfg);
    let (s, _) = api.get("/me", &old_token).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let p = api.login("p@example.org").await;
    let d = api.login("d@example.org").await;
    let (_, grants) = api.get("/grants", &p).await;
    assert_eq!(grants[0]["status"], "ACTIVE");
    let (s, v) = api.get(&format!("/records/{rec_id}"), &d).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        B64.decode(v["content_base64"].as_str().unwrap()).unwrap(),
        b"asthma since 2009"
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn operator_cannot_forge_a_grant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        mode: LedgerMode::Pow,
        pow_bits: 4,
        ..config()
    };
    let api = api(&cfg);
    let p = api.signup(patient("p@example.org")).await;
    let d = api.signup(doctor("d@example.org")).await;
    let (_, rec) = api
        .post(
            "/records",
            Some(&p),
            json!({"kind": "LAB", "content_base64": B64.encode("TSH 2.1")}),
        )
        .await;
    let id = Digest::from_hex(rec["id"].as_str().unwrap()).unwrap();

    // A grant pointer written straight into the document store grants nothing.
    let docs = FileDocumentStore::open(dir.path().join("documents")).unwrap();
    let doctor_key = api
        .state
        .ehr
        .account("d@example.org")
        .unwrap()
        .unwrap()
        .signing_key;
    let patient_key = api
        .state
        .ehr
        .account("p@example.org")
        .unwrap()
        .unwrap()
        .signing_key;
    docs.put(
        "grants",
        &"ee".repeat(32),
        &json!({"record": id, "patient": patient_key, "grantee": doctor_key}),
    )
    .unwrap();
    let (s, _) = api.get(&format!("/records/{id}"), &d).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    // A lineage transaction signed by anyone but the patient is rejected.
    let operator = ehrchain_core::crypto::SigningKeyPair::from_seed(&[42; 32]).unwrap();
    let state = record_state(&api.state.ehr.snapshot(), &id).unwrap();
    let forged = build_transfer_tx(
        &operator,
        state.head,
        id,
        PublicKey(patient_key.0),
        Some(state.meta.to_metadata()),
    );
    assert!(api.state.ehr.ledger().submit(forged).is_err());

    // Genuine grants are signed by the patient.
    let (_, g) = api
        .post(
            "/grants",
            Some(&p),
            json!({"record": id.to_hex(), "doctor": doctor_key.to_hex()}),
        )
        .await;
    let gid = Digest::from_hex(g["id"].as_str().unwrap()).unwrap();
    let chain = api.state.ehr.snapshot();
    let tx = chain.transaction(&gid).unwrap();
    assert_eq!(tx.inputs[0].owner, patient_key);
}
