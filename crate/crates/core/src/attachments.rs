//! Soft copies of applications (scans, documents, drawings).
//!
//! File bytes live in a content-addressed [`BlobStore`] keyed by the hex
//! SHA-256 of the content; the relational side only records metadata. An
//! application references at most one attachment. Replacing it leaves the
//! previous row and blob in place until [`Registry::sweep_attachments`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::access::UserContext;
use crate::error::{Error, Result};
use crate::ids::{AppId, AttachmentId};
use crate::model::{AppStatus, EventKind, RoutingEvent};
use crate::registry::Registry;
use crate::store::Mutation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub attachment_id: AttachmentId,
    pub app_id: AppId,
    pub original_filename: String,
    pub media_type: String,
    pub byte_size: u64,
    /// Lowercase hex SHA-256 of the content.
    pub content_digest: String,
    pub stored_name: String,
}

pub fn content_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Storage key for a digest: a two-character fan-out directory plus the rest.
pub fn stored_name_for(digest: &str) -> String {
    format!("{}/{}", &digest[..2], &digest[2..])
}

fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub trait BlobStore: Send + Sync {
    /// Stores `bytes` under `digest`. Storing the same content twice is a no-op.
    fn put(&self, digest: &str, bytes: &[u8]) -> Result<()>;
    fn get(&self, digest: &str) -> Result<Option<Vec<u8>>>;
    fn remove(&self, digest: &str) -> Result<()>;
    fn digests(&self) -> Result<BTreeSet<String>>;
    fn clear(&self) -> Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryBlobStore {
    blobs: RwLock<BTreeMap<String, Arc<Vec<u8>>>>,
}

impl MemoryBlobStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&self, digest: &str, bytes: &[u8]) -> Result<()> {
        self.blobs
            .write()
            .entry(digest.to_owned())
            .or_insert_with(|| Arc::new(bytes.to_vec()));
        Ok(())
    }

    fn get(&self, digest: &str) -> Result<Option<Vec<u8>>> {
        Ok(self.blobs.read().get(digest).map(|b| b.as_ref().clone()))
    }

    fn remove(&self, digest: &str) -> Result<()> {
        self.blobs.write().remove(digest);
        Ok(())
    }

    fn digests(&self) -> Result<BTreeSet<String>> {
        Ok(self.blobs.read().keys().cloned().collect())
    }

    fn clear(&self) -> Result<()> {
        self.blobs.write().clear();
        Ok(())
    }
}

/// Blobs as files under `root/<aa>/<rest-of-digest>`.
#[derive(Debug, Clone)]
pub struct FsBlobStore {
    root: PathBuf,
}

impl FsBlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(Error::storage)?;
        Ok(FsBlobStore { root })
    }

    fn path_of(&self, digest: &str) -> Result<PathBuf> {
        if !is_digest(digest) {
            return Err(Error::storage(format!("malformed digest `{digest}`")));
        }
        Ok(self.root.join(stored_name_for(digest)))
    }
}

impl BlobStore for FsBlobStore {
    fn put(&self, digest: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path_of(digest)?;
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("blob path has a fan-out directory");
        std::fs::create_dir_all(dir).map_err(Error::storage)?;
        let tmp = path.with_extension("part");
        std::fs::write(&tmp, bytes).map_err(Error::storage)?;
        std::fs::rename(&tmp, &path).map_err(Error::storage)
    }

    fn get(&self, digest: &str) -> Result<Option<Vec<u8>>> {
        match std::fs::read(self.path_of(digest)?) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::storage(e)),
        }
    }

    fn remove(&self, digest: &str) -> Result<()> {
        match std::fs::remove_file(self.path_of(digest)?) {
            Err(e) if e.kind() != ErrorKind::NotFound => Err(Error::storage(e)),
            _ => Ok(()),
        }
    }

    fn digests(&self) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for fan in read_dir(&self.root)? {
            let Some(prefix) = fan.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
                continue;
            };
            if !fan.is_dir() {
                continue;
            }
            for file in read_dir(&fan)? {
                if let Some(rest) = file.file_name().and_then(|n| n.to_str()) {
                    let digest = format!("{prefix}{rest}");
                    if is_digest(&digest) {
                        out.insert(digest);
                    }
                }
            }
        }
        Ok(out)
    }

    fn clear(&self) -> Result<()> {
        for digest in self.digests()? {
            self.remove(&digest)?;
        }
        Ok(())
    }
}

fn read_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::read_dir(dir)
        .map_err(Error::storage)?
        .map(|e| e.map(|e| e.path()).map_err(Error::storage))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentPolicy {
    pub allowed_media_types: BTreeSet<String>,
    pub max_bytes: u64,
}

const DEFAULT_TYPES: &[&str] = &[
    // images
    "image/png",
    "image/jpeg",
    "image/gif",
    "image/tiff",
    "image/bmp",
    "image/webp",
    // documents
    "application/pdf",
    "text/plain",
    "application/msword",
    "application/vnd.openxmlformats-officedocument.wordprocessingml.document",
    "application/vnd.ms-excel",
    "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
    "application/vnd.ms-powerpoint",
    "application/vnd.openxmlformats-officedocument.presentationml.presentation",
    // drawings
    "image/vnd.dwg",
    "image/vnd.dxf",
    "application/acad",
    "application/dxf",
    // archives
    "application/zip",
    "application/vnd.rar",
    "application/x-rar-compressed",
];

impl Default for AttachmentPolicy {
    fn default() -> Self {
        AttachmentPolicy {
            allowed_media_types: DEFAULT_TYPES.iter().map(|s| s.to_string()).collect(),
            max_bytes: 25 * 1024 * 1024,
        }
    }
}

impl AttachmentPolicy {
    /// Lowercased essence of a media type, without parameters.
    pub fn essence(media_type: &str) -> String {
        media_type
            .split(';')
            .next()
            .unwrap_or_default()
            .trim()
            .to_ascii_lowercase()
    }

    pub fn check(&self, media_type: &str, size: u64) -> Result<String> {
        let essence = Self::essence(media_type);
        if !self.allowed_media_types.contains(&essence) {
            return Err(Error::DisallowedType(media_type.to_owned()));
        }
        if size > self.max_bytes {
            return Err(Error::TooLarge {
                size,
                limit: self.max_bytes,
            });
        }
        Ok(essence)
    }
}

/// Result of an attachment consistency sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentAudit {
    /// Rows whose blob is missing or whose bytes no longer match the digest.
    pub damaged: Vec<AttachmentId>,
    /// Applications referencing an attachment row that does not exist.
    pub dangling_references: Vec<AppId>,
    /// Rows no application currently references (superseded uploads).
    pub superseded: Vec<AttachmentId>,
    /// Blobs that no row refers to.
    pub orphan_blobs: Vec<String>,
}

impl AttachmentAudit {
    pub fn is_clean(&self) -> bool {
        self.damaged.is_empty() && self.dangling_references.is_empty()
    }
}

impl Registry {
    pub fn upload_attachment(
        &self,
        app_id: AppId,
        filename: &str,
        media_type: &str,
        bytes: &[u8],
        actor: &UserContext,
    ) -> Result<Attachment> {
        let media_type = self.config().attachments.check(media_type, bytes.len() as u64)?;
        if filename.trim().is_empty() || filename.chars().any(char::is_control) {
            return Err(Error::validation("filename"));
        }
        // cheap precondition check before hashing and writing the blob
        self.store().read(|t| {
            let app = t.application(app_id).ok_or(Error::NotFound)?;
            if app.current_location != self.actor_dept(t, actor)? {
                return Err(Error::NotAuthorized);
            }
            Ok(())
        })?;
        let digest = content_digest(bytes);
        self.blobs().put(&digest, bytes)?;

        let now = self.clock().now();
        self.store().write(now, |tx| {
            let t = tx.tables();
            let mut app = t.application(app_id).cloned().ok_or(Error::NotFound)?;
            if app.status == AppStatus::Published {
                return Err(Error::AlreadyPublished);
            }
            if app.current_location != self.actor_dept(t, actor)? {
                return Err(Error::NotAuthorized);
            }
            let replaced = app.attachment.is_some();
            let attachment = Attachment {
                attachment_id: tx.next_attachment_id(),
                app_id,
                original_filename: filename.to_owned(),
                media_type: media_type.clone(),
                byte_size: bytes.len() as u64,
                stored_name: stored_name_for(&digest),
                content_digest: digest.clone(),
            };
            app.attachment = Some(attachment.attachment_id);
            let event = RoutingEvent {
                event_id: tx.next_event_id(),
                app_id,
                kind: EventKind::Updated,
                from_dept: None,
                to_dept: None,
                actor: actor.user_id(),
                at: now,
                note: if replaced { "attachment replaced" } else { "attachment" }.to_owned(),
            };
            tx.stage(Mutation::AppendEvent(event))?;
            tx.stage(Mutation::PutAttachment(attachment.clone()))?;
            tx.stage(Mutation::PutApplication(app))?;
            Ok(attachment)
        })
    }

    /// Returns the current attachment of an application with its bytes,
    /// verified against the recorded digest.
    pub fn retrieve_attachment(&self, app_id: AppId, _viewer: &UserContext) -> Result<(Attachment, Vec<u8>)> {
        let meta = self.store().read(|t| {
            let app = t.application(app_id).ok_or(Error::NotFound)?;
            let id = app.attachment.ok_or(Error::NoAttachment)?;
            t.attachment(id)
                .cloned()
                .ok_or_else(|| Error::storage(format!("attachment row {id} missing")))
        })?;
        let bytes = self
            .blobs()
            .get(&meta.content_digest)?
            .ok_or_else(|| Error::storage(format!("blob {} missing", meta.content_digest)))?;
        if content_digest(&bytes) != meta.content_digest {
            return Err(Error::storage(format!("blob {} is corrupt", meta.content_digest)));
        }
        Ok((meta, bytes))
    }

    pub fn audit_attachments(&self, admin: &UserContext) -> Result<AttachmentAudit> {
        admin.require_admin()?;
        self.audit_attachments_unchecked()
    }

    pub(crate) fn audit_attachments_unchecked(&self) -> Result<AttachmentAudit> {
        let (rows, referenced, dangling) = self.store().read(|t| {
            let rows: Vec<Attachment> = t.attachments().cloned().collect();
            let mut referenced = BTreeSet::new();
            let mut dangling = Vec::new();
            for app in t.applications() {
                if let Some(id) = app.attachment {
                    if t.attachment(id).is_some() {
                        referenced.insert(id);
                    } else {
                        dangling.push(app.app_id);
                    }
                }
            }
            (rows, referenced, dangling)
        });
        let mut audit = AttachmentAudit {
            dangling_references: dangling,
            ..Default::default()
        };
        let blobs = self.blobs().digests()?;
        let mut row_digests = BTreeSet::new();
        for row in &rows {
            row_digests.insert(row.content_digest.as_str());
            let intact = row.stored_name == stored_name_for(&row.content_digest)
                && match self.blobs().get(&row.content_digest)? {
                    Some(b) => b.len() as u64 == row.byte_size && content_digest(&b) == row.content_digest,
                    None => false,
                };
            if !intact {
                audit.damaged.push(row.attachment_id);
            }
            if !referenced.contains(&row.attachment_id) {
                audit.superseded.push(row.attachment_id);
            }
        }
        audit.orphan_blobs = blobs
            .iter()
            .filter(|d| !row_digests.contains(d.as_str()))
            .cloned()
            .collect();
        Ok(audit)
    }

    /// Drops superseded attachment rows and any blob left without a row.
    pub fn sweep_attachments(&self, admin: &UserContext) -> Result<AttachmentAudit> {
        let audit = self.audit_attachments(admin)?;
        self.store().write(self.clock().now(), |tx| {
            for id in &audit.superseded {
                tx.stage(Mutation::RemoveAttachment(*id))?;
            }
            Ok(())
        })?;
        let still_used: BTreeSet<String> = self
            .store()
            .read(|t| t.attachments().map(|a| a.content_digest.clone()).collect());
        for digest in self.blobs().digests()? {
            if !still_used.contains(&digest) {
                self.blobs().remove(&digest)?;
            }
        }
        Ok(audit)
    }
}
