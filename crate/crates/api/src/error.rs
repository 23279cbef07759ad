//! The closed set of error codes the service returns.

use std::fmt;

use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use dlms_core::Error;
use serde::{Deserialize, Serialize};

use crate::catalog::{localize, render, Locale};

macro_rules! error_codes {
    ($($variant:ident => $code:literal, $status:ident;)*) => {
        /// Stable machine-readable error tokens.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "SCREAMING_SNAKE_CASE")]
        pub enum ErrorCode {
            $($variant,)*
        }

        impl ErrorCode {
            pub const ALL: &'static [ErrorCode] = &[$(ErrorCode::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(ErrorCode::$variant => $code,)*
                }
            }

            pub fn status(self) -> StatusCode {
                match self {
                    $(ErrorCode::$variant => StatusCode::$status,)*
                }
            }
        }
    };
}

error_codes! {
    AccessDeniedIp => "ACCESS_DENIED_IP", FORBIDDEN;
    InvalidSession => "INVALID_SESSION", UNAUTHORIZED;
    BadCredentials => "BAD_CREDENTIALS", UNAUTHORIZED;
    WrongDepartment => "WRONG_DEPARTMENT", FORBIDDEN;
    NotAuthorized => "NOT_AUTHORIZED", FORBIDDEN;
    NotFound => "NOT_FOUND", NOT_FOUND;
    ValidationFailed => "VALIDATION_FAILED", UNPROCESSABLE_ENTITY;
    ImmutableField => "IMMUTABLE_FIELD", UNPROCESSABLE_ENTITY;
    DuplicateIncomingNumber => "DUPLICATE_INCOMING_NUMBER", CONFLICT;
    UnknownDepartment => "UNKNOWN_DEPARTMENT", UNPROCESSABLE_ENTITY;
    AlreadyPublished => "ALREADY_PUBLISHED", CONFLICT;
    SelfRedirect => "SELF_REDIRECT", CONFLICT;
    NotAtOutgoing => "NOT_AT_OUTGOING", CONFLICT;
    DuplicateUsername => "DUPLICATE_USERNAME", CONFLICT;
    DuplicateDepartmentCode => "DUPLICATE_DEPARTMENT_CODE", CONFLICT;
    InvariantViolation => "INVARIANT_VIOLATION", CONFLICT;
    InvalidQuery => "INVALID_QUERY", BAD_REQUEST;
    StorageFailure => "STORAGE_FAILURE", INTERNAL_SERVER_ERROR;
    ConflictRetryable => "CONFLICT_RETRYABLE", SERVICE_UNAVAILABLE;
    ChecksumMismatch => "CHECKSUM_MISMATCH", UNPROCESSABLE_ENTITY;
    UnsupportedVersion => "UNSUPPORTED_VERSION", UNPROCESSABLE_ENTITY;
    CorruptPayload => "CORRUPT_PAYLOAD", UNPROCESSABLE_ENTITY;
    DisallowedType => "DISALLOWED_TYPE", UNSUPPORTED_MEDIA_TYPE;
    TooLarge => "TOO_LARGE", PAYLOAD_TOO_LARGE;
    NoAttachment => "NO_ATTACHMENT", NOT_FOUND;
    BadRequest => "BAD_REQUEST", BAD_REQUEST;
    MethodNotAllowed => "METHOD_NOT_ALLOWED", METHOD_NOT_ALLOWED;
    Internal => "INTERNAL", INTERNAL_SERVER_ERROR;
}

impl ErrorCode {
    pub fn message_key(self) -> String {
        format!("error.{}", self.as_str().to_ascii_lowercase())
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub code: ErrorCode,
    pub detail: Option<String>,
}

/// Wire form of an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub http_status: u16,
    pub message_key: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode) -> Self {
        ApiError { code, detail: None }
    }

    pub fn with_detail(code: ErrorCode, detail: impl Into<String>) -> Self {
        ApiError {
            code,
            detail: Some(detail.into()),
        }
    }

    pub fn bad_request(detail: impl fmt::Display) -> Self {
        Self::with_detail(ErrorCode::BadRequest, detail.to_string())
    }

    pub fn body(&self, locale: Locale) -> ErrorBody {
        let key = self.code.message_key();
        let message = match localize(&key, locale) {
            Ok(t) => render(t, self.detail.as_deref()),
            Err(_) => self.code.as_str().to_owned(),
        };
        ErrorBody {
            code: self.code,
            http_status: self.code.status().as_u16(),
            message_key: key,
            message,
            detail: self.detail.clone(),
        }
    }

    /// Renders the error in `locale`. The error itself rides along in the
    /// response extensions so the locale middleware can re-render it.
    pub fn into_localized_response(self, locale: Locale) -> Response {
        let body = serde_json::to_vec(&self.body(locale)).expect("error body serializes");
        let mut res = (self.code.status(), body).into_response();
        res.headers_mut().insert(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json; charset=utf-8"),
        );
        if self.code == ErrorCode::ConflictRetryable {
            res.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
        }
        res.extensions_mut().insert(self);
        res
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        self.into_localized_response(Locale::default())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use ErrorCode as C;
        match e {
            Error::DuplicateIncomingNumber { year, number } => {
                ApiError::with_detail(C::DuplicateIncomingNumber, format!("{year}/{number}"))
            }
            Error::UnknownDepartment => ApiError::new(C::UnknownDepartment),
            Error::ValidationFailed(field) => ApiError::with_detail(C::ValidationFailed, field),
            Error::NotAuthorized => ApiError::new(C::NotAuthorized),
            Error::NotFound => ApiError::new(C::NotFound),
            Error::AlreadyPublished => ApiError::new(C::AlreadyPublished),
            Error::SelfRedirect => ApiError::new(C::SelfRedirect),
            Error::ImmutableField(field) => ApiError::with_detail(C::ImmutableField, field),
            Error::NotAtOutgoing => ApiError::new(C::NotAtOutgoing),
            Error::BadCredentials => ApiError::new(C::BadCredentials),
            Error::AccessDeniedIp => ApiError::new(C::AccessDeniedIp),
            Error::InvalidSession => ApiError::new(C::InvalidSession),
            Error::WrongDepartment => ApiError::new(C::WrongDepartment),
            Error::DuplicateUsername => ApiError::new(C::DuplicateUsername),
            Error::DuplicateDepartmentCode(code) => {
                ApiError::with_detail(C::DuplicateDepartmentCode, code.to_string())
            }
            Error::InvariantViolation(what) => ApiError::with_detail(C::InvariantViolation, what),
            Error::InvalidQuery(what) => ApiError::with_detail(C::InvalidQuery, what),
            Error::StorageFailure(what) => {
                tracing::error!(%what, "storage failure");
                ApiError::new(C::StorageFailure)
            }
            Error::ConflictRetryable => ApiError::new(C::ConflictRetryable),
            Error::ChecksumMismatch => ApiError::new(C::ChecksumMismatch),
            Error::UnsupportedVersion(v) => ApiError::with_detail(C::UnsupportedVersion, v.to_string()),
            Error::CorruptPayload(what) => ApiError::with_detail(C::CorruptPayload, what),
            Error::DisallowedType(t) => ApiError::with_detail(C::DisallowedType, t),
            Error::TooLarge { size, limit } => {
                ApiError::with_detail(C::TooLarge, format!("{size} > {limit} bytes"))
            }
            Error::NoAttachment => ApiError::new(C::NoAttachment),
        }
    }
}
