use std::fmt;
use std::path::Path;

use serde::Deserialize;
use url::Url;

use crate::error::{CliError, Result};

pub const ENV_USER: &str = "DLMS_ADMIN_USER";
pub const ENV_PASSWORD: &str = "DLMS_ADMIN_PASSWORD";
pub const ENV_TOKEN: &str = "DLMS_TOKEN";

pub const DEFAULT_API: &str = "http://127.0.0.1:8080";
pub const DEFAULT_ADMIN_PATH: &str = "/_ops";

/// A value that must never reach the terminal. It has no `Display` and its
/// `Debug` is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Credentials {
    Token(Secret),
    Login { username: String, password: Secret },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub api: Url,
    pub admin_path: String,
    pub locale: String,
    pub credentials: Option<Credentials>,
}

/// Optional settings file. Secrets are not accepted here.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub api: Option<String>,
    pub admin_path: Option<String>,
    pub locale: Option<String>,
    pub username: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        toml::from_str(&text).map_err(|e| CliError::Parse {
            what: path.display().to_string(),
            message: e.message().to_owned(),
        })
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub api: Option<String>,
    pub admin_path: Option<String>,
    pub locale: Option<String>,
}

pub fn parse_api(raw: &str) -> Result<Url> {
    let url = Url::parse(raw).map_err(|e| CliError::Usage(format!("--api {raw:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(CliError::Usage(format!("--api must be http or https, got {}", url.scheme())));
    }
    if url.cannot_be_a_base() || url.host().is_none() {
        return Err(CliError::Usage("--api must name a host".into()));
    }
    if !url.username().is_empty() || url.password().is_some() {
        return Err(CliError::Usage(
            "--api must not embed credentials; use the environment instead".into(),
        ));
    }
    Ok(url)
}

impl CliConfig {
    /// Flags win over the file, which wins over defaults. Credentials come
    /// only from the environment: a token, or a username and password.
    pub fn resolve(flags: &Overrides, file: &FileConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let api = flags
            .api
            .as_deref()
            .or(file.api.as_deref())
            .unwrap_or(DEFAULT_API);
        let admin_path = flags
            .admin_path
            .clone()
            .or_else(|| file.admin_path.clone())
            .unwrap_or_else(|| DEFAULT_ADMIN_PATH.into());
        let admin_path = format!("/{}", admin_path.trim_matches('/'));
        if admin_path == "/" {
            return Err(CliError::Usage("--admin-path must not be empty".into()));
        }
        let locale = flags
            .locale
            .clone()
            .or_else(|| file.locale.clone())
            .unwrap_or_else(|| "ku".into());
        if !matches!(locale.as_str(), "ku" | "en") {
            return Err(CliError::Usage(format!("--locale must be ku or en, got {locale:?}")));
        }
        let non_empty = |name| env(name).filter(|v: &String| !v.is_empty());
        let credentials = match non_empty(ENV_TOKEN) {
            Some(token) => Some(Credentials::Token(Secret::new(token))),
            None => {
                let username = non_empty(ENV_USER).or_else(|| file.username.clone());
                match (username, non_empty(ENV_PASSWORD)) {
                    (Some(username), Some(password)) => Some(Credentials::Login {
                        username,
                        password: Secret::new(password),
                    }),
                    _ => None,
                }
            }
        };
        Ok(CliConfig {
            api: parse_api(api)?,
            admin_path,
            locale,
            credentials,
        })
    }
}
