use thiserror::Error;

/// Every failure the domain layers can report.
///
/// The set is closed: the HTTP layer maps each variant to exactly one stable
/// error code, so adding a variant is a breaking change there too.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("incoming number {number} already registered for {year}")]
    DuplicateIncomingNumber { year: i32, number: u32 },
    #[error("unknown department")]
    UnknownDepartment,
    #[error("validation failed for field `{0}`")]
    ValidationFailed(String),
    #[error("not authorized")]
    NotAuthorized,
    #[error("not found")]
    NotFound,
    #[error("application already published")]
    AlreadyPublished,
    #[error("application is already at the target department")]
    SelfRedirect,
    #[error("field `{0}` is immutable")]
    ImmutableField(String),
    #[error("application is not at the outgoing department")]
    NotAtOutgoing,

    #[error("bad credentials")]
    BadCredentials,
    #[error("access denied from this address")]
    AccessDeniedIp,
    #[error("invalid or expired session")]
    InvalidSession,
    #[error("wrong department for this operation")]
    WrongDepartment,
    #[error("username already taken")]
    DuplicateUsername,
    #[error("department code {0} already in use")]
    DuplicateDepartmentCode(u32),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("conflicting write in progress, retry")]
    ConflictRetryable,
    #[error("backup checksum mismatch")]
    ChecksumMismatch,
    #[error("unsupported backup format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt backup payload: {0}")]
    CorruptPayload(String),

    #[error("media type `{0}` is not allowed")]
    DisallowedType(String),
    #[error("attachment of {size} bytes exceeds the {limit} byte limit")]
    TooLarge { size: u64, limit: u64 },
    #[error("application has no attachment")]
    NoAttachment,
}

impl Error {
    pub fn validation(field: impl Into<String>) -> Self {
        Error::ValidationFailed(field.into())
    }

    pub(crate) fn storage(err: impl std::fmt::Display) -> Self {
        Error::StorageFailure(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
