use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use perception_core::SessionError;
use serde::Serialize;

/// Error body: `{"code": "...", "message": "..."}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code, message: message.into() } }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::Finished(_) => (StatusCode::CONFLICT, "session_finished"),
            SessionError::Exhausted => (StatusCode::CONFLICT, "exhausted"),
            SessionError::NotPending { .. } => (StatusCode::CONFLICT, "not_pending"),
            SessionError::OutOfBounds { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_bounds"),
            SessionError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_answer"),
            SessionError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure"),
            SessionError::InvalidBounds { .. } | SessionError::DimensionMismatch { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "misconfigured")
            }
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
