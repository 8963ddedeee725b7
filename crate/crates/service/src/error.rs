use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::record::Phase;

/// Error body: `{"error": {"code", "message", "details"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("session `{0}` not found")]
    SessionNotFound(String),

    #[error("unknown corpus `{0}`")]
    UnknownCorpus(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("request not allowed in phase {actual}; expected {expected}")]
    PhaseOrder { expected: Phase, actual: Phase },

    #[error("missing answers for {} items", .missing.len())]
    Incomplete { missing: Vec<String> },

    #[error("item `{0}` is not part of the current request")]
    UnexpectedItem(String),

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error("invalid answer: {0}")]
    InvalidAnswer(String),

    #[error("malformed request body: {0}")]
    BadRequest(String),

    #[error("session log could not be replayed: {0}")]
    Replay(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::SessionNotFound(_) => "session_not_found",
            ApiError::UnknownCorpus(_) => "unknown_corpus",
            ApiError::InvalidConfig(_) => "invalid_config",
            ApiError::PhaseOrder { .. } => "phase_order",
            ApiError::Incomplete { .. } => "incomplete_answers",
            ApiError::UnexpectedItem(_) => "unexpected_item",
            ApiError::InvalidFeedback(_) => "invalid_feedback",
            ApiError::InvalidAnswer(_) => "invalid_answer",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Replay(_) => "replay_failed",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::SessionNotFound(_) | ApiError::UnknownCorpus(_) => StatusCode::NOT_FOUND,
            ApiError::PhaseOrder { .. } => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Replay(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    fn details(&self) -> Value {
        match self {
            ApiError::PhaseOrder { expected, actual } => serde_json::json!({ "expected": expected, "actual": actual }),
            ApiError::Incomplete { missing } => serde_json::json!({ "missing": missing }),
            ApiError::UnexpectedItem(id) => serde_json::json!({ "item_id": id }),
            _ => Value::Null,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: ErrorDetail {
                code: self.code().to_string(),
                message: self.to_string(),
                details: self.details(),
            },
        }
    }
}

impl From<xal_core::Error> for ApiError {
    fn from(e: xal_core::Error) -> Self {
        use xal_core::Error as E;
        match e {
            E::MissingLabels(missing) => ApiError::Incomplete { missing },
            E::NotPending(id) | E::UnknownItem(id) => ApiError::UnexpectedItem(id),
            E::IncompleteFeedback { .. } | E::ForeignFeedback { .. } | E::UnknownFeature(_) => {
                ApiError::InvalidFeedback(e.to_string())
            }
            E::InvalidConfig(m) => ApiError::InvalidConfig(m),
            E::Protocol(m) => ApiError::InvalidAnswer(m),
            E::ReplayDivergence { .. } => ApiError::Replay(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
