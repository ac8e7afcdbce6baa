//! Client errors and their process exit codes.

use archive_core::error::FieldError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_AUTH: i32 = 2;
pub const EXIT_NETWORK: i32 = 3;
pub const EXIT_REFUSED: i32 = 4;
pub const EXIT_CHECKSUM: i32 = 5;

/// The error body returned by the server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub field_errors: Option<Vec<FieldError>>,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input on the local side: arguments, files, configuration.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Auth(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("server error {}: {} ({})", .0.status, .0.message, .0.code)]
    Remote(RemoteError),
    /// A precondition the client enforces itself, such as publishing only shared records.
    #[error("{0}")]
    Refused(String),
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Auth(_) => EXIT_AUTH,
            CliError::Network(_) => EXIT_NETWORK,
            CliError::Refused(_) => EXIT_REFUSED,
            CliError::Checksum(_) => EXIT_CHECKSUM,
            CliError::Remote(e) => match e.status {
                401 => EXIT_AUTH,
                400 | 411 | 422 => EXIT_VALIDATION,
                s if s >= 500 => EXIT_NETWORK,
                _ => EXIT_REFUSED,
            },
        }
    }

    /// The `code` of a server error, if this is one.
    pub fn remote_code(&self) -> Option<&str> {
        match self {
            CliError::Remote(e) => Some(&e.code),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Remote(e) => serde_json::json!({
                "exit_code": self.exit_code(),
                "status": e.status,
                "code": e.code,
                "message": e.message,
                "field_errors": e.field_errors,
            }),
            other => serde_json::json!({ "exit_code": self.exit_code(), "message": other.to_string() }),
        }
    }
}

impl From<reqwest::Error> for CliError {
    fn from(e: reqwest::Error) -> Self {
        CliError::Network(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    fn remote(status: u16) -> CliError {
        CliError::Remote(RemoteError {
            status,
            code: "x".into(),
            message: "m".into(),
            field_errors: None,
        })
    }

    #[test]
    fn exit_code_scheme() {
        assert_eq!(remote(400).exit_code(), 1);
        assert_eq!(remote(401).exit_code(), 2);
        for s in [403, 404, 409, 413] {
            assert_eq!(remote(s).exit_code(), 4, "{s}");
        }
        assert_eq!(remote(500).exit_code(), 3);
        assert_eq!(remote(503).exit_code(), 3);
        assert_eq!(CliError::Network("down".into()).exit_code(), 3);
        assert_eq!(CliError::Usage("bad".into()).exit_code(), 1);
        assert_eq!(CliError::Auth("no token".into()).exit_code(), 2);
        assert_eq!(CliError::Refused("draft".into()).exit_code(), 4);
        assert_eq!(CliError::Checksum("a.csv".into()).exit_code(), 5);
    }
}
