use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Unauthorized,
    NotFound,
    Duplicate,
    UnknownToken,
    TokenConsumed,
    AlreadyActivated,
    WrongProof,
    UnknownProperty,
    NotInCampaign,
    PrivacyViolation,
    InvalidInput,
    /// The server could not be reached or answered with something unreadable.
    Unavailable,
    Internal,
}

impl ErrorKind {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorKind::Unauthorized | ErrorKind::UnknownToken | ErrorKind::WrongProof => 401,
            ErrorKind::NotFound => 404,
            ErrorKind::Duplicate | ErrorKind::TokenConsumed | ErrorKind::AlreadyActivated => 409,
            ErrorKind::UnknownProperty
            | ErrorKind::NotInCampaign
            | ErrorKind::PrivacyViolation
            | ErrorKind::InvalidInput => 422,
            ErrorKind::Internal => 500,
            ErrorKind::Unavailable => 503,
        }
    }
}

/// Error returned by every service operation and carried over HTTP as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(ErrorKind::Unauthorized, "missing or invalid credentials")
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::InvalidInput, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = serde_json::to_value(self.kind).ok();
        let kind = kind.as_ref().and_then(|v| v.as_str()).unwrap_or("error");
        write!(f, "{kind}: {}", self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<rusqlite::Error> for ApiError {
    fn from(e: rusqlite::Error) -> Self {
        ApiError::new(ErrorKind::Internal, format!("store: {e}"))
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
