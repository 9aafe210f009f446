use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ehrchain_core::crypto::{Digest, PublicKey};
use ehrchain_core::ehr::{
    Account, Actor, Ehr, EhrError, GrantSummary, Prescription, PrescriptionFields, Profile,
    RecordKind, RecordSummary, Role, VitalReading,
};
use ehrchain_core::ledger::{Block, Seal};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::AppState;

const MAX_BODY: usize = 64 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/register", post(register))
        .route("/verify-otp", post(verify_otp))
        .route("/resend-otp", post(resend_otp))
        .route("/login", post(login))
        .route("/logout", post(logout))
        .route("/me", get(me))
        .route("/doctors", get(doctors))
        .route("/records", post(add_record).get(list_records))
        .route("/records/:id", get(fetch_record))
        .route("/vitals", post(vitals))
        .route("/grants", post(grant).get(list_grants))
        .route("/grants/:id", delete(revoke))
        .route("/prescriptions", post(prescribe))
        .route("/chain/blocks", get(blocks))
        .route("/chain/blocks/:height", get(block))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v)
        .map_err(|e| ApiError::validation(e.body_text()))
}

/// Runs blocking ehr work (key derivation, consensus) off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Ehr) -> Result<T, EhrError> + Send + 'static,
{
    let ehr = state.ehr.clone();
    tokio::task::spawn_blocking(move || f(&ehr))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

pub struct Authed {
    token: String,
    actor: Arc<Actor>,
}

#[axum::async_trait]
impl FromRequestParts<AppState> for Authed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> ApiResult<Self> {
        let value = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        let token = value
            .strip_prefix("Bearer ")
            .ok_or_else(|| ApiError::unauthenticated("expected a bearer token"))?
            .trim()
            .to_string();
        let actor = state.sessions.get(&token)?;
        Ok(Authed { token, actor })
    }
}

fn parse_digest(s: &str, what: &str) -> ApiResult<Digest> {
    Digest::from_hex(s).map_err(|_| ApiError::validation(format!("{what} must be 64 hex digits")))
}

/// Accepts an email address or a hex signing key.
fn resolve(ehr: &Ehr, who: &str) -> Result<PublicKey, EhrError> {
    if who.contains('@') {
        return ehr
            .account(who)?
            .map(|a| a.signing_key)
            .ok_or_else(|| EhrError::UnknownAccount(who.to_string()));
    }
    let key = PublicKey::from_hex(who.trim())
        .map_err(|_| EhrError::InvalidInput(format!("{who:?} is neither an email nor a key")))?;
    ehr.account_by_key(&key)?
        .map(|a| a.signing_key)
        .ok_or_else(|| EhrError::UnknownAccount(who.to_string()))
}

// ---- accounts and sessions ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterReq {
    profile: Profile,
    password: String,
}

#[derive(Serialize, Deserialize)]
pub struct PendingResp {
    pub email: String,
    pub role: Role,
    pub status: String,
}

async fn register(
    State(st): State<AppState>,
    req: Result<Json<RegisterReq>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<PendingResp>)> {
    let req = body(req)?;
    let role = req.profile.role();
    let email = blocking(&st, move |ehr| {
        let email = ehrchain_core::ehr::normalize_email(req.profile.email())?;
        ehr.register(req.profile, &req.password)?;
        Ok(email)
    })
    .await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(PendingResp {
            email,
            role,
            status: "pending_verification".into(),
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyReq {
    email: String,
    code: String,
}

async fn verify_otp(
    State(st): State<AppState>,
    req: Result<Json<VerifyReq>, JsonRejection>,
) -> ApiResult<Json<Account>> {
    let req = body(req)?;
    let account = blocking(&st, move |ehr| ehr.verify_otp(&req.email, &req.code)).await?;
    Ok(Json(account))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmailReq {
    email: String,
}

async fn resend_otp(
    State(st): State<AppState>,
    req: Result<Json<EmailReq>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let req = body(req)?;
    blocking(&st, move |ehr| ehr.regenerate_otp(&req.email)).await?;
    Ok(StatusCode::ACCEPTED)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoginReq {
    email: String,
    password: String,
}

#[derive(Serialize, Deserialize)]
pub struct LoginResp {
    pub token: String,
    pub expires_in_secs: u64,
    pub account: Account,
}

async fn login(
    State(st): State<AppState>,
    req: Result<Json<LoginReq>, JsonRejection>,
) -> ApiResult<Json<LoginResp>> {
    let req = body(req)?;
    let actor = blocking(&st, move |ehr| ehr.login(&req.email, &req.password)).await?;
    let account = actor.account.clone();
    let token = st.sessions.open(actor);
    Ok(Json(LoginResp {
        token,
        expires_in_secs: st.sessions.ttl().as_secs(),
        account,
    }))
}

async fn logout(State(st): State<AppState>, auth: Authed) -> StatusCode {
    st.sessions.close(&auth.token);
    StatusCode::NO_CONTENT
}

async fn me(auth: Authed) -> Json<Account> {
    Json(auth.actor.account.clone())
}

#[derive(Serialize, Deserialize)]
pub struct DoctorView {
    pub name: String,
    pub email: String,
    pub key: PublicKey,
    pub hospital: String,
    pub specialization: String,
}

async fn doctors(State(st): State<AppState>, _auth: Authed) -> ApiResult<Json<Vec<DoctorView>>> {
    let accounts = blocking(&st, |ehr| ehr.accounts()).await?;
    Ok(Json(
        accounts
            .into_iter()
            .filter_map(|a| match &a.profile {
                Profile::Doctor(d) => Some(DoctorView {
                    name: a.profile.display_name(),
                    email: d.email.clone(),
                    key: a.signing_key,
                    hospital: d.hospital.clone(),
                    specialization: d.specialization.clone(),
                }),
                Profile::Patient(_) => None,
            })
            .collect(),
    ))
}

// ---- records ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddRecordReq {
    kind: RecordKind,
    content_base64: String,
    /// Set when a doctor uploads for a patient.
    #[serde(default)]
    patient: Option<String>,
}

async fn add_record(
    State(st): State<AppState>,
    auth: Authed,
    req: Result<Json<AddRecordReq>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<RecordSummary>)> {
    let req = body(req)?;
    let content = B64
        .decode(req.content_base64.as_bytes())
        .map_err(|e| ApiError::validation(format!("content_base64: {e}")))?;
    let actor = auth.actor.clone();
    let summary = blocking(&st, move |ehr| match (actor.role(), req.patient) {
        (Role::Patient, None) => ehr.add_record(&actor, &content, req.kind),
        (Role::Doctor, Some(p)) => {
            let patient = resolve(ehr, &p)?;
            ehr.add_record_for(&actor, &patient, &content, req.kind)
        }
        (Role::Patient, Some(_)) => Err(EhrError::InvalidInput(
            "patients upload to their own records only".into(),
        )),
        (Role::Doctor, None) => Err(EhrError::InvalidInput(
            "doctors must name the patient the record belongs to".into(),
        )),
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_records(
    State(st): State<AppState>,
    auth: Authed,
) -> ApiResult<Json<Vec<RecordSummary>>> {
    let actor = auth.actor.clone();
    Ok(Json(
        blocking(&st, move |ehr| Ok(ehr.list_records(&actor))).await?,
    ))
}

#[derive(Serialize, Deserialize)]
pub struct RecordContent {
    pub record: RecordSummary,
    pub content_base64: String,
    /// Decoded fields when the record is a prescription.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prescription: Option<Prescription>,
}

async fn fetch_record(
    State(st): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
) -> ApiResult<Json<RecordContent>> {
    let id = parse_digest(&id, "record id")?;
    let actor = auth.actor.clone();
    let out = blocking(&st, move |ehr| {
        let content = ehr.fetch_record(&actor, &id)?;
        let record = ehr.record_summary(&actor, &id)?;
        let prescription = if record.kind == RecordKind::Prescription {
            serde_json::from_slice(&content).ok()
        } else {
            None
        };
        Ok(RecordContent {
            record,
            content_base64: B64.encode(content),
            prescription,
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VitalsReq {
    readings: Vec<VitalReading>,
    /// Commit buffered readings even if the batch is not full.
    #[serde(default)]
    flush: bool,
}

#[derive(Serialize, Deserialize)]
pub struct VitalsResp {
    pub records: Vec<RecordSummary>,
    pub buffered: usize,
}

async fn vitals(
    State(st): State<AppState>,
    auth: Authed,
    req: Result<Json<VitalsReq>, JsonRejection>,
) -> ApiResult<Json<VitalsResp>> {
    let req = body(req)?;
    for r in &req.readings {
        r.validate().map_err(ApiError::from)?;
    }
    let actor = auth.actor.clone();
    let out = blocking(&st, move |ehr| {
        let mut records = Vec::new();
        for r in req.readings {
            records.extend(ehr.ingest_vitals(&actor, r)?);
        }
        if req.flush {
            records.extend(ehr.flush_vitals(&actor)?);
        }
        Ok(VitalsResp {
            records,
            buffered: ehr.buffered_vitals(&actor.public()),
        })
    })
    .await?;
    Ok(Json(out))
}

// ---- grants ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GrantReq {
    record: String,
    /// Email or signing key of the doctor.
    doctor: String,
}

async fn grant(
    State(st): State<AppState>,
    auth: Authed,
    req: Result<Json<GrantReq>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<GrantSummary>)> {
    let req = body(req)?;
    let record = parse_digest(&req.record, "record")?;
    let actor = auth.actor.clone();
    let g = blocking(&st, move |ehr| {
        let doctor = resolve(ehr, &req.doctor)?;
        ehr.grant_access(&actor, &doctor, &record)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(g)))
}

async fn list_grants(
    State(st): State<AppState>,
    auth: Authed,
) -> ApiResult<Json<Vec<GrantSummary>>> {
    let actor = auth.actor.clone();
    Ok(Json(
        blocking(&st, move |ehr| Ok(ehr.list_grants(&actor))).await?,
    ))
}

#[derive(Serialize, Deserialize)]
pub struct RevokeResp {
    pub record: RecordSummary,
    pub grant: GrantSummary,
}

async fn revoke(
    State(st): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
) -> ApiResult<Json<RevokeResp>> {
    let id = parse_digest(&id, "grant id")?;
    let actor = auth.actor.clone();
    let (record, grant) = blocking(&st, move |ehr| ehr.revoke_grant(&actor, &id)).await?;
    Ok(Json(RevokeResp { record, grant }))
}

// ---- prescriptions ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrescriptionReq {
    patient: String,
    views_on_report: String,
    special_care: String,
    allergies: String,
    medicine_suggestions: String,
}

async fn prescribe(
    State(st): State<AppState>,
    auth: Authed,
    req: Result<Json<PrescriptionReq>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<RecordSummary>)> {
    let req = body(req)?;
    let actor = auth.actor.clone();
    let rec = blocking(&st, move |ehr| {
        let patient = resolve(ehr, &req.patient)?;
        ehr.add_prescription(
            &actor,
            &patient,
            PrescriptionFields {
                views_on_report: req.views_on_report,
                special_care: req.special_care,
                allergies: req.allergies,
                medicine_suggestions: req.medicine_suggestions,
            },
        )
    })
    .await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

// ---- chain explorer ----

#[derive(Serialize, Deserialize)]
pub struct BlockSummary {
    pub height: u64,
    pub hash: Digest,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub tx_count: usize,
    pub seal: Seal,
    pub certified: bool,
}

impl BlockSummary {
    fn of(block: &Block) -> Self {
        Self {
            height: block.height(),
            hash: block.hash(),
            prev_hash: block.header.prev_hash,
            timestamp: block.header.timestamp,
            tx_count: block.txs.len(),
            seal: block.header.seal.clone(),
            certified: block.commit.is_some(),
        }
    }
}

async fn blocks(State(st): State<AppState>) -> Json<Vec<BlockSummary>> {
    let chain = st.ehr.snapshot();
    Json(chain.blocks().iter().map(BlockSummary::of).collect())
}

#[derive(Serialize, Deserialize)]
pub struct BlockDetail {
    #[serde(flatten)]
    pub summary: BlockSummary,
    pub block: Block,
}

async fn block(
    State(st): State<AppState>,
    Path(height): Path<String>,
) -> ApiResult<Json<BlockDetail>> {
    let h: usize = height
        .parse()
        .map_err(|_| ApiError::validation("height must be a non-negative integer"))?;
    let chain = st.ehr.snapshot();
    let b = chain
        .blocks()
        .get(h)
        .ok_or_else(|| ApiError::not_found(format!("no block at height {h}")))?;
    Ok(Json(BlockDetail {
        summary: BlockSummary::of(b),
        block: b.clone(),
    }))
}
