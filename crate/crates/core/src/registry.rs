use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use chrono::Duration;
use parking_lot::RwLock;

use crate::access::{default_session_ttl, PasswordConfig, SessionRecord, TokenDigest, UserContext};
use crate::attachments::{AttachmentPolicy, BlobStore, FsBlobStore, MemoryBlobStore};
use crate::clock::{Clock, SystemClock};
use crate::error::{Error, Result};
use crate::ids::DeptId;
use crate::store::{Store, Tables};

#[derive(Debug, Clone)]
pub struct Config {
    pub session_ttl: Duration,
    pub password: PasswordConfig,
    pub attachments: AttachmentPolicy,
    pub default_page_size: u32,
    pub max_page_size: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            session_ttl: default_session_ttl(),
            password: PasswordConfig::default(),
            attachments: AttachmentPolicy::default(),
            default_page_size: 20,
            max_page_size: 200,
        }
    }
}

impl Config {
    pub(crate) fn resolve_page_size(&self, requested: Option<u32>) -> Result<u32> {
        match requested {
            None => Ok(self.default_page_size),
            Some(0) => Err(Error::InvalidQuery("page_size must be positive".into())),
            Some(n) if n > self.max_page_size => Err(Error::InvalidQuery(format!(
                "page_size {n} exceeds the maximum of {}",
                self.max_page_size
            ))),
            Some(n) => Ok(n),
        }
    }
}

/// The records service: every domain operation hangs off this type.
pub struct Registry {
    store: Store,
    blobs: Arc<dyn BlobStore>,
    sessions: RwLock<HashMap<TokenDigest, SessionRecord>>,
    clock: Arc<dyn Clock>,
    config: Config,
    dummy_digest: String,
}

impl Registry {
    pub fn new(store: Store, blobs: Arc<dyn BlobStore>, clock: Arc<dyn Clock>, config: Config) -> Result<Self> {
        let dummy_digest = config.password.digest("not-a-real-password")?;
        Ok(Registry {
            store,
            blobs,
            sessions: RwLock::new(HashMap::new()),
            clock,
            config,
            dummy_digest,
        })
    }

    /// Volatile registry with the system clock.
    pub fn in_memory(config: Config) -> Result<Self> {
        Self::new(
            Store::in_memory(),
            Arc::new(MemoryBlobStore::new()),
            Arc::new(SystemClock),
            config,
        )
    }

    /// Durable registry rooted at `dir` (`dir/db` for records, `dir/blobs`
    /// for attachment content).
    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>, config: Config) -> Result<Self> {
        let dir = dir.as_ref();
        let store = Store::open(dir.join("db"))?;
        let blobs = Arc::new(FsBlobStore::new(dir.join("blobs"))?);
        Self::new(store, blobs, clock, config)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn blobs(&self) -> &dyn BlobStore {
        self.blobs.as_ref()
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub(crate) fn sessions(&self) -> &RwLock<HashMap<TokenDigest, SessionRecord>> {
        &self.sessions
    }

    pub(crate) fn dummy_digest(&self) -> &str {
        &self.dummy_digest
    }

    /// Number of sessions currently held, expired ones excluded.
    pub fn live_session_count(&self) -> usize {
        self.purge_expired_sessions();
        self.sessions.read().len()
    }

    /// The actor's department as recorded in the store (not as cached in the
    /// context).
    pub(crate) fn actor_dept(&self, t: &Tables, actor: &UserContext) -> Result<DeptId> {
        t.user(actor.user_id())
            .map(|u| u.dept_id)
            .ok_or(Error::NotAuthorized)
    }
}
