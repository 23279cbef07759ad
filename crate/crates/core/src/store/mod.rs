//! Transactional record store.
//!
//! All tables live in memory behind one reader/writer lock. A write
//! transaction stages [`Mutation`]s and applies them together at commit, so a
//! reader never observes an event without the state change that goes with
//! it. A store opened on a directory additionally appends each committed
//! batch to a checksummed journal and replays it on the next open; a torn
//! final record is discarded.

mod journal;
mod tables;

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::access::UserAccount;
use crate::attachments::Attachment;
use crate::error::{Error, Result};
use crate::ids::{AppId, AttachmentId, DeptId, EventId, NewsId, UserId};
use crate::model::{Application, Department, PublishRecord, RoutingEvent};
use crate::news::NewsItem;

pub use journal::Fault;
pub(crate) use tables::ListKey;
pub(crate) use tables::Rows;
pub use tables::{Meta, Tables};

use journal::Journal;

/// A single row-level change. Batches of these are the unit of commit and of
/// journaling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mutation {
    PutDepartment(Department),
    PutUser(UserAccount),
    PutApplication(Application),
    AppendEvent(RoutingEvent),
    PutPublishRecord(PublishRecord),
    PutAttachment(Attachment),
    RemoveAttachment(AttachmentId),
    PutNews(NewsItem),
    RemoveNews(NewsId),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Commit {
    pub at: DateTime<Utc>,
    pub meta: Meta,
    pub mutations: Vec<Mutation>,
}

/// A write transaction.
///
/// Reads through [`Tx::tables`] see the state as of the start of the
/// transaction; staged mutations become visible only after commit.
pub struct Tx<'a> {
    tables: &'a Tables,
    meta: Meta,
    mutations: Vec<Mutation>,
    fault: Option<Fault>,
    event_staged: bool,
}

impl<'a> Tx<'a> {
    pub fn tables(&self) -> &'a Tables {
        self.tables
    }

    pub fn stage(&mut self, mutation: Mutation) -> Result<()> {
        if self.event_staged && self.fault == Some(Fault::CrashAfterEvent) {
            self.fault = None;
            return Err(Error::storage("injected crash after event append"));
        }
        match &mutation {
            Mutation::AppendEvent(ev) => {
                if self.tables.events.contains_key(&ev.event_id) {
                    return Err(Error::InvariantViolation(format!(
                        "event {} already exists",
                        ev.event_id
                    )));
                }
                self.event_staged = true;
            }
            Mutation::RemoveNews(id) if !self.tables.news.contains_key(id) => {
                return Err(Error::NotFound);
            }
            _ => {}
        }
        self.mutations.push(mutation);
        Ok(())
    }

    pub fn next_dept_id(&mut self) -> DeptId {
        DeptId(bump(&mut self.meta.next_dept_id))
    }

    pub fn next_app_id(&mut self) -> AppId {
        AppId(bump(&mut self.meta.next_app_id))
    }

    pub fn next_event_id(&mut self) -> EventId {
        EventId(bump(&mut self.meta.next_event_id))
    }

    pub fn next_user_id(&mut self) -> UserId {
        UserId(bump(&mut self.meta.next_user_id))
    }

    pub fn next_news_id(&mut self) -> NewsId {
        NewsId(bump(&mut self.meta.next_news_id))
    }

    pub fn next_attachment_id(&mut self) -> AttachmentId {
        AttachmentId(bump(&mut self.meta.next_attachment_id))
    }
}

fn bump(counter: &mut u64) -> u64 {
    *counter += 1;
    *counter
}

pub struct Store {
    tables: RwLock<Tables>,
    journal: Option<Mutex<Journal>>,
    snapshot_path: Option<PathBuf>,
    fault: Mutex<Option<Fault>>,
    lock_timeout: Duration,
}

const SNAPSHOT_FILE: &str = "snapshot.dlms";
const JOURNAL_FILE: &str = "journal.log";

impl Default for Store {
    fn default() -> Self {
        Store::in_memory()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            tables: RwLock::new(Tables::default()),
            journal: None,
            snapshot_path: None,
            fault: Mutex::new(None),
            lock_timeout: Duration::from_secs(5),
        }
    }

    /// Opens (or creates) a durable store in `dir`: the last snapshot plus
    /// every intact journal record written after it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(Error::storage)?;
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let mut tables = match std::fs::read(&snapshot_path) {
            Ok(bytes) => crate::backup::decode_payload(&bytes)?.0,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Tables::default(),
            Err(e) => return Err(Error::storage(e)),
        };
        let (journal, commits) = Journal::open(dir.join(JOURNAL_FILE))?;
        for commit in commits {
            tables.apply(commit);
        }
        Ok(Store {
            tables: RwLock::new(tables),
            journal: Some(Mutex::new(journal)),
            snapshot_path: Some(snapshot_path),
            fault: Mutex::new(None),
            lock_timeout: Duration::from_secs(5),
        })
    }

    pub fn is_durable(&self) -> bool {
        self.journal.is_some()
    }

    pub fn set_lock_timeout(&mut self, timeout: Duration) {
        self.lock_timeout = timeout;
    }

    /// Arms a one-shot fault for the next write transaction. Test hook.
    pub fn inject_fault(&self, fault: Fault) {
        *self.fault.lock() = Some(fault);
    }

    pub fn read<R>(&self, f: impl FnOnce(&Tables) -> R) -> R {
        f(&self.tables.read())
    }

    /// Runs `f` as one atomic transaction stamped with `at`.
    ///
    /// Writers are serialized. If `f` fails nothing is applied. If the lock
    /// cannot be taken within the configured timeout the call fails with
    /// [`Error::ConflictRetryable`].
    pub fn write<R>(
        &self,
        at: DateTime<Utc>,
        f: impl FnOnce(&mut Tx<'_>) -> Result<R>,
    ) -> Result<R> {
        let mut guard = self
            .tables
            .try_write_for(self.lock_timeout)
            .ok_or(Error::ConflictRetryable)?;
        let fault = self.fault.lock().take();
        let (out, commit) = {
            let mut tx = Tx {
                tables: &guard,
                meta: guard.meta.clone(),
                mutations: Vec::new(),
                fault,
                event_staged: false,
            };
            let out = f(&mut tx)?;
            let mut meta = tx.meta;
            meta.last_modified = Some(at);
            let commit = Commit {
                at,
                meta,
                mutations: tx.mutations,
            };
            if commit.mutations.is_empty() {
                return Ok(out);
            }
            (out, commit)
        };
        if let Some(journal) = &self.journal {
            journal.lock().append(&commit, fault)?;
        } else if fault == Some(Fault::TornJournalWrite) {
            return Err(Error::storage("injected torn write"));
        }
        guard.apply(commit);
        Ok(out)
    }

    /// Replaces every table wholesale. For durable stores the new state is
    /// written as the snapshot and the journal is reset.
    pub(crate) fn replace_all(&self, tables: Tables) -> Result<()> {
        let mut guard = self
            .tables
            .try_write_for(self.lock_timeout)
            .ok_or(Error::ConflictRetryable)?;
        if let (Some(journal), Some(path)) = (&self.journal, &self.snapshot_path) {
            write_atomically(path, &crate::backup::encode_payload(&tables, &[])?)?;
            journal.lock().reset()?;
        }
        *guard = tables;
        Ok(())
    }

    /// Folds the journal into a fresh snapshot. No-op for in-memory stores.
    pub fn checkpoint(&self) -> Result<()> {
        let (Some(journal), Some(path)) = (&self.journal, &self.snapshot_path) else {
            return Ok(());
        };
        // the write lock keeps commits out while the journal is reset
        let guard = self.tables.write();
        let payload = crate::backup::encode_payload(&guard, &[])?;
        write_atomically(path, &payload)?;
        journal.lock().reset()
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(Error::storage)?;
    std::fs::rename(&tmp, path).map_err(Error::storage)
}
