use thiserror::Error;

/// Every way a command can fail. Each variant has its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{message} [{code}, HTTP {status}]")]
    Api { status: u16, code: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error("archive rejected: {0}")]
    Checksum(String),
}

/// `(exit code, class, meaning)` for every outcome.
pub const EXIT_CODES: &[(u8, &str, &str)] = &[
    (0, "ok", "command succeeded"),
    (2, "usage", "bad flags, configuration or missing credentials"),
    (3, "parse", "seed or configuration file is malformed"),
    (4, "invariant", "seed would break the department structure or clashes with the server"),
    (5, "api", "the service refused the request or could not be reached"),
    (6, "io", "local file could not be read or written"),
    (7, "checksum", "backup archive failed verification"),
];

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse { .. } => 3,
            CliError::Invariant(_) => 4,
            CliError::Api { .. } => 5,
            CliError::Io(_) => 6,
            CliError::Checksum(_) => 7,
        }
    }

    pub fn class(&self) -> &'static str {
        let code = self.exit_code();
        EXIT_CODES
            .iter()
            .find(|(c, _, _)| *c == code)
            .map(|(_, class, _)| *class)
            .expect("every exit code is documented")
    }

    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "class": self.class(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Api { status, code, .. } = self {
            v["code"] = code.as_str().into();
            v["http_status"] = (*status).into();
        }
        serde_json::json!({ "error": v })
    }
}

impl From<dlms_core::Error> for CliError {
    fn from(e: dlms_core::Error) -> Self {
        match e {
            dlms_core::Error::ChecksumMismatch
            | dlms_core::Error::CorruptPayload(_)
            | dlms_core::Error::UnsupportedVersion(_) => CliError::Checksum(e.to_string()),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
