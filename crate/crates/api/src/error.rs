use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cdr_core::{Error, ErrorKind, Operation};
use serde::Serialize;
use thiserror::Error as ThisError;

/// Startup failures.
#[derive(Debug, ThisError)]
pub enum ServeError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("port {port} is unavailable: {reason}")]
    PortUnavailable { port: u16, reason: String },
    #[error(transparent)]
    Store(#[from] Error),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::ConfigInvalid(_) => "ConfigInvalid",
            ServeError::PortUnavailable { .. } => "PortUnavailable",
            ServeError::Store(e) => e.code(),
            ServeError::Io(_) => "Internal",
        }
    }
}

/// Request failures, rendered as `{ "error": <code>, "detail": <text> }`.
#[derive(Debug)]
pub enum ApiError {
    Domain(Error),
    Unauthorized,
    Forbidden(Operation),
    MalformedRequest(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    detail: String,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Domain(e) => status_for(e.kind()),
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::MalformedRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Domain(e) => e.code(),
            ApiError::Unauthorized => "Unauthorized",
            ApiError::Forbidden(_) => "Forbidden",
            ApiError::MalformedRequest(_) => "MalformedRequest",
        }
    }
}

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Forbidden => StatusCode::FORBIDDEN,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Domain(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let detail = match &self {
            ApiError::Domain(e) => e.to_string(),
            ApiError::Unauthorized => "missing or unknown bearer token".into(),
            ApiError::Forbidden(op) => format!("role may not perform {op:?}"),
            ApiError::MalformedRequest(msg) => msg.clone(),
        };
        if self.status().is_server_error() {
            tracing::error!(code = self.code(), %detail, "request failed");
        }
        let body = ErrorBody { error: self.code(), detail };
        (self.status(), Json(body)).into_response()
    }
}
