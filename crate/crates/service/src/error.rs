//! JSON error bodies: `{"code", "message", "detail"}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use questwriter_core::writer::{SpineError, WriterError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
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
                code: code.to_string(),
                message: message.into(),
                detail: serde_json::Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: impl Serialize) -> Self {
        self.body.detail = serde_json::to_value(detail).unwrap_or_default();
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    pub fn stale(expected: u64, current: u64) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "stale_revision",
            format!("revision {expected} is stale; the session is at {current}"),
        )
        .with_detail(serde_json::json!({ "current_revision": current }))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl From<SpineError> for ApiError {
    fn from(e: SpineError) -> Self {
        let message = e.to_string();
        match e {
            SpineError::RoundOpen => Self::new(StatusCode::CONFLICT, "round_open", message),
            SpineError::NoOpenRound => Self::new(StatusCode::CONFLICT, "no_open_round", message),
            SpineError::NotACandidate(_) => Self::new(StatusCode::CONFLICT, "not_a_candidate", message),
            SpineError::UnknownNode(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
            SpineError::Writer(w) => w.into(),
            SpineError::ZeroSize | SpineError::EmptyRound | SpineError::UnknownSpeaker(_) | SpineError::InvalidEdit(_) => {
                Self::invalid(message)
            }
        }
    }
}

impl From<WriterError> for ApiError {
    fn from(e: WriterError) -> Self {
        let message = e.to_string();
        match e {
            WriterError::Backend(_) => Self::new(StatusCode::BAD_GATEWAY, "backend_failure", message),
            WriterError::NoCandidates { .. } => Self::new(StatusCode::BAD_GATEWAY, "no_candidates", message),
            WriterError::ZeroK | WriterError::Prompt(_) => Self::invalid(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parses a JSON body: syntax errors are 400, shape errors 422.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        let (status, code) = match e.classify() {
            serde_json::error::Category::Data => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            _ => (StatusCode::BAD_REQUEST, "malformed_json"),
        };
        ApiError::new(status, code, e.to_string())
    })
}
