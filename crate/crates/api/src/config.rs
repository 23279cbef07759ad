use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use dlms_core::{AttachmentPolicy, Config, PasswordConfig};
use serde::{Deserialize, Serialize};

use crate::catalog::Locale;

/// Service settings, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Where the store and attachment blobs live. `None` keeps everything in
    /// memory.
    pub data_dir: Option<PathBuf>,
    /// Mount point of the administrative endpoints.
    pub admin_path: String,
    pub default_locale: Locale,
    /// Take the client address from the last `X-Forwarded-For` entry. Only
    /// enable behind a proxy that sets it.
    pub trust_forwarded_for: bool,
    pub secure_cookie: bool,
    pub session_ttl_minutes: i64,
    pub max_restore_bytes: usize,
    pub password: PasswordConfig,
    pub attachments: AttachmentPolicy,
    pub bootstrap: Option<BootstrapConfig>,
}

/// First admin account, created only on an empty store. The password comes
/// from the environment, never from the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub username: String,
    pub bound_ip: IpAddr,
    #[serde(default = "default_admin_code")]
    pub dept_code: u32,
    #[serde(default = "default_admin_name")]
    pub dept_name: String,
    #[serde(default = "default_password_env")]
    pub password_env: String,
}

fn default_admin_code() -> u32 {
    1
}

fn default_admin_name() -> String {
    "Administration".into()
}

fn default_password_env() -> String {
    "DLMS_BOOTSTRAP_PASSWORD".into()
}

pub const DEFAULT_ADMIN_PATH: &str = "/_ops";

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            admin_path: DEFAULT_ADMIN_PATH.into(),
            default_locale: Locale::Ku,
            trust_forwarded_for: false,
            secure_cookie: true,
            session_ttl_minutes: 8 * 60,
            max_restore_bytes: 1 << 30,
            password: PasswordConfig::default(),
            attachments: AttachmentPolicy::default(),
            bootstrap: None,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Admin mount point with exactly one leading and no trailing slash.
    pub fn admin_prefix(&self) -> String {
        format!("/{}", self.admin_path.trim_matches('/'))
    }

    pub fn core_config(&self) -> Config {
        Config {
            session_ttl: chrono::Duration::minutes(self.session_ttl_minutes),
            password: self.password,
            attachments: self.attachments.clone(),
            ..Config::default()
        }
    }
}
