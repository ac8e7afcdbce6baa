use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = ArchiveError> = std::result::Result<T, E>;

/// One problem found while validating user input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

/// Field-level validation outcome; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidationReport(pub Vec<FieldError>);

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.0.push(FieldError {
            field: field.into(),
            reason: reason.into(),
        });
    }

    pub fn contains(&self, field: &str, reason: &str) -> bool {
        self.0.iter().any(|e| e.field == field && e.reason == reason)
    }

    pub fn has_field(&self, field: &str) -> bool {
        self.0.iter().any(|e| e.field == field)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(ArchiveError::Validation(self))
        }
    }
}

/// Machine-readable reason attached to a denied permission decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    NotMember,
    DraftPrivate,
    ImmutableFiles,
    OwnerOnly,
    NotManager,
    Unauthenticated,
    AlreadyShared,
    LinkExpired,
    LinkRevoked,
    UnknownToken,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::NotMember => "not-member",
            DenyReason::DraftPrivate => "draft-private",
            DenyReason::ImmutableFiles => "immutable-files",
            DenyReason::OwnerOnly => "owner-only",
            DenyReason::NotManager => "not-manager",
            DenyReason::Unauthenticated => "unauthenticated",
            DenyReason::AlreadyShared => "already-shared",
            DenyReason::LinkExpired => "link-expired",
            DenyReason::LinkRevoked => "link-revoked",
            DenyReason::UnknownToken => "unknown-token",
        }
    }
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConflictKind {
    DraftExists,
    AlreadyShared,
    DuplicateName,
    /// Lost a check-and-set race against another writer.
    Concurrent,
}

impl ConflictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConflictKind::DraftExists => "draft-exists",
            ConflictKind::AlreadyShared => "already-shared",
            ConflictKind::DuplicateName => "duplicate-name",
            ConflictKind::Concurrent => "conflict",
        }
    }
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("validation failed: {0:?}")]
    Validation(ValidationReport),
    #[error("authentication failed")]
    Unauthenticated,
    #[error("permission denied: {0}")]
    Denied(DenyReason),
    #[error("not found")]
    NotFound,
    #[error("conflict: {}", .0.as_str())]
    Conflict(ConflictKind),
    #[error("quota exceeded: {requested} bytes requested, limit {limit} bytes")]
    QuotaExceeded { limit: u64, requested: u64 },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("storage error: {0}")]
    Storage(#[from] rusqlite::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ArchiveError {
    pub fn validation(field: &str, reason: &str) -> Self {
        let mut report = ValidationReport::default();
        report.push(field, reason);
        ArchiveError::Validation(report)
    }
}
