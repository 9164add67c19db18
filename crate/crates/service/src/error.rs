use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use segfuse_core::catalog::CatalogError;
use segfuse_core::io::IoError;
use segfuse_core::raster::RasterError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    PreconditionFailed,
    Gone,
    Validation,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict => 409,
            ErrorCode::PreconditionFailed => 412,
            ErrorCode::Gone => 410,
            ErrorCode::Validation => 422,
            ErrorCode::Internal => 500,
        }
    }
}

/// Error body sent to clients: `{"code", "message", "details"}`.
#[derive(Debug, Clone, Error, Serialize)]
#[error("{code:?}: {message}")]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(ErrorCode::NotFound, format!("{what} '{id}' not found"))
    }

    pub fn conflict_version(current: u64, given: u64) -> Self {
        Self::new(
            ErrorCode::Conflict,
            format!("base_version {given} is stale, current version is {current}"),
        )
        .with_details(json!({ "current_version": current }))
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(ErrorCode::Internal, message.to_string())
    }
}

impl From<IoError> for ServiceError {
    fn from(e: IoError) -> Self {
        Self::internal(e)
    }
}

impl From<CatalogError> for ServiceError {
    fn from(e: CatalogError) -> Self {
        Self::internal(format!("manifest: {e}"))
    }
}

impl From<RasterError> for ServiceError {
    fn from(e: RasterError) -> Self {
        Self::internal(e)
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e)
    }
}
