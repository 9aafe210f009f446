use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ehrchain_core::cluster::NodeError;
use ehrchain_core::ehr::EhrError;
use serde::{Deserialize, Serialize};

/// Body of every error response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_input", message)
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<EhrError> for ApiError {
    fn from(e: EhrError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            EhrError::DuplicateEmail(_) => (S::CONFLICT, "duplicate_email"),
            EhrError::UnknownAccount(_) => (S::NOT_FOUND, "unknown_account"),
            EhrError::NoPendingRegistration(_) => (S::NOT_FOUND, "no_pending_registration"),
            EhrError::WrongOtp { .. } => (S::BAD_REQUEST, "wrong_otp"),
            EhrError::OtpLocked => (S::CONFLICT, "otp_locked"),
            EhrError::Unverified(_) => (S::FORBIDDEN, "unverified"),
            EhrError::WrongCredentials => (S::UNAUTHORIZED, "wrong_credentials"),
            EhrError::WrongRole(_) => (S::FORBIDDEN, "wrong_role"),
            EhrError::NotOwner => (S::FORBIDDEN, "not_owner"),
            EhrError::AccessDenied => (S::FORBIDDEN, "access_denied"),
            EhrError::DuplicateGrant => (S::CONFLICT, "duplicate_grant"),
            EhrError::NoActiveGrant => (S::CONFLICT, "no_active_grant"),
            EhrError::RecordNotFound(_) => (S::NOT_FOUND, "record_not_found"),
            EhrError::GrantNotFound(_) => (S::NOT_FOUND, "grant_not_found"),
            EhrError::InvalidInput(_) => (S::BAD_REQUEST, "invalid_input"),
            EhrError::Integrity(_) => (S::INTERNAL_SERVER_ERROR, "integrity"),
            EhrError::Node(NodeError::Stalled | NodeError::NoLiveNode) => {
                (S::SERVICE_UNAVAILABLE, "ledger_unavailable")
            }
            EhrError::Node(NodeError::Ledger(_)) => (S::CONFLICT, "ledger_rejected"),
            EhrError::Node(_) | EhrError::DocumentStore(_) | EhrError::Crypto(_) => {
                (S::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}
