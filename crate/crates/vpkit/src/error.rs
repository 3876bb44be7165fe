use serde::Serialize;
use serde_json::{json, Value};

/// Failure category; decides both the process exit code and the HTTP status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Io,
    Validation,
    NotFound,
    Conflict,
    IncompleteAnnotation,
    StoreUnavailable,
    Internal,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Io => "io_error",
            ErrorKind::Validation => "validation_failed",
            ErrorKind::NotFound => "not_found",
            ErrorKind::Conflict => "conflict",
            ErrorKind::IncompleteAnnotation => "incomplete_annotation",
            ErrorKind::StoreUnavailable => "store_unavailable",
            ErrorKind::Internal => "internal",
        }
    }

    /// 2 for I/O, 3 for validation, 4 for internal faults.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Io | ErrorKind::NotFound | ErrorKind::StoreUnavailable => 2,
            ErrorKind::Validation | ErrorKind::Conflict | ErrorKind::IncompleteAnnotation => 3,
            ErrorKind::Internal => 4,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
    pub details: Value,
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), details: Value::Null }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Io, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, message)
    }

    /// Prefixes the message with the file or resource it concerns.
    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "code": self.kind.code(), "message": self.message, "details": self.details } })
    }
}

impl From<vpkit_core::Error> for AppError {
    fn from(e: vpkit_core::Error) -> Self {
        match e {
            vpkit_core::Error::Predictor(_) => AppError::internal(e.to_string()),
            _ => AppError::validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::NotFound => AppError::not_found(e.to_string()),
            _ => AppError::io(e.to_string()),
        }
    }
}

impl From<image::ImageError> for AppError {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(io) => io.into(),
            other => AppError::io(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            AppError::io(e.to_string())
        } else {
            AppError::validation(e.to_string())
        }
    }
}
