use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use margin_agents::ToolError;
use margin_core::StoreError;
use serde_json::json;

use crate::auth::AuthError;
use crate::telemetry::TelemetryError;

/// An error response: `{"error": {"code", "message"}}` with a matching status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation_error", message)
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "this project belongs to another user")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::Validation(_) | StoreError::Relocation => Self::validation(e.to_string()),
            StoreError::Io(_) | StoreError::Corrupt { .. } => Self::internal(e.to_string()),
        }
    }
}

impl From<TelemetryError> for ApiError {
    fn from(e: TelemetryError) -> Self {
        match e {
            TelemetryError::Malformed(_) | TelemetryError::OutOfOrder { .. } => Self::validation(e.to_string()),
            TelemetryError::Corrupt { .. } | TelemetryError::Io(_) => Self::internal(e.to_string()),
        }
    }
}

impl From<ToolError> for ApiError {
    fn from(e: ToolError) -> Self {
        let status = match e {
            ToolError::UnknownTool(_) => StatusCode::NOT_FOUND,
            ToolError::InputViolation(_) | ToolError::Handler(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ToolError::OutputViolation(_) | ToolError::Schema(_) | ToolError::Duplicate(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}
