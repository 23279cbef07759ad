//! Canonical export and the backup archive file.
//!
//! # Canonical payload
//!
//! UTF-8 text, one record per line:
//!
//! ```text
//! DLMS-EXPORT 1
//! @meta 1
//! {"next_dept_id":7,...}
//! @departments 7
//! {"dept_id":1,...}
//! ...
//! @blobs 1
//! {"digest":"ab12...","data":"<base64>"}
//! @end <sha256 hex of every preceding byte>
//! ```
//!
//! Tables appear in the fixed order of [`TABLES`], each introduced by
//! `@<name> <row count>` and holding its rows as compact JSON sorted by
//! primary key. The payload is a pure function of the store contents, so
//! two exports of an unchanged store are byte-identical.
//!
//! # Archive file
//!
//! | offset | size | content                                         |
//! |--------|------|-------------------------------------------------|
//! | 0      | 4    | magic `DLMS`                                    |
//! | 4      | 2    | format version, big-endian (`1`)                |
//! | 6      | 1    | mode: `0` = NONE, `1` = ZIPPED                  |
//! | 7      | 32   | SHA-256 of the *uncompressed* canonical payload |
//! | 39     | 8    | length of the stored payload, big-endian        |
//! | 47     | n    | payload: canonical bytes, or their raw DEFLATE  |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::{DateTime, Utc};
use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::access::UserContext;
use crate::attachments::content_digest;
use crate::error::{Error, Result};
use crate::model::replay;
use crate::registry::Registry;
use crate::store::{Meta, Rows, Tables};

pub const MAGIC: &[u8; 4] = b"DLMS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 32 + 8;
const PAYLOAD_HEADER: &str = "DLMS-EXPORT 1";

/// Table sections in payload order.
pub const TABLES: [&str; 9] = [
    "meta",
    "departments",
    "users",
    "applications",
    "events",
    "publish_records",
    "attachments",
    "news",
    "blobs",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BackupMode {
    #[serde(alias = "none")]
    None,
    #[serde(alias = "zipped")]
    Zipped,
}

impl BackupMode {
    fn byte(self) -> u8 {
        match self {
            BackupMode::None => 0,
            BackupMode::Zipped => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(BackupMode::None),
            1 => Some(BackupMode::Zipped),
            _ => None,
        }
    }
}

impl fmt::Display for BackupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackupMode::None => "NONE",
            BackupMode::Zipped => "ZIPPED",
        })
    }
}

impl FromStr for BackupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(BackupMode::None),
            "zipped" | "zip" => Ok(BackupMode::Zipped),
            _ => Err(Error::validation("mode")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BlobRow {
    digest: String,
    data: String,
}

fn push_section<T: Serialize>(out: &mut Vec<u8>, name: &str, rows: impl ExactSizeIterator<Item = T>) -> Result<()> {
    writeln!(out, "@{name} {}", rows.len()).map_err(Error::storage)?;
    for row in rows {
        serde_json::to_writer(&mut *out, &row).map_err(Error::storage)?;
        out.push(b'\n');
    }
    Ok(())
}

/// Serializes `tables` plus the given blobs (digest → content) canonically.
pub fn encode_payload(tables: &Tables, blobs: &[(String, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 * 1024);
    writeln!(out, "{PAYLOAD_HEADER}").map_err(Error::storage)?;
    push_section(&mut out, "meta", std::iter::once(tables.meta()))?;
    push_section(&mut out, "departments", tables.departments.values())?;
    push_section(&mut out, "users", tables.users.values())?;
    push_section(&mut out, "applications", tables.applications.values())?;
    push_section(&mut out, "events", tables.events.values())?;
    push_section(&mut out, "publish_records", tables.publish_records.values())?;
    push_section(&mut out, "attachments", tables.attachments.values())?;
    push_section(&mut out, "news", tables.news.values())?;
    let mut sorted: Vec<&(String, Vec<u8>)> = blobs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    push_section(
        &mut out,
        "blobs",
        sorted.into_iter().map(|(digest, data)| BlobRow {
            digest: digest.clone(),
            data: STANDARD.encode(data),
        }),
    )?;
    let digest = hex::encode(Sha256::digest(&out));
    writeln!(out, "@end {digest}").map_err(Error::storage)?;
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptPayload(msg.into())
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.text[self.pos..];
        let end = rest.find('\n').ok_or_else(|| corrupt("truncated payload"))?;
        self.pos += end + 1;
        Ok(&rest[..end])
    }

    fn section_header(&mut self, name: &str) -> Result<usize> {
        let line = self.next_line()?;
        let count = line
            .strip_prefix('@')
            .and_then(|l| l.strip_prefix(name))
            .and_then(|l| l.strip_prefix(' '))
            .ok_or_else(|| corrupt(format!("expected section `{name}`")))?;
        count
            .parse()
            .map_err(|_| corrupt(format!("bad row count for `{name}`")))
    }

    fn rows<T: DeserializeOwned>(&mut self, name: &str) -> Result<Vec<T>> {
        let n = self.section_header(name)?;
        (0..n)
            .map(|i| {
                serde_json::from_str(self.next_line()?)
                    .map_err(|e| corrupt(format!("{name} row {i}: {e}")))
            })
            .collect()
    }
}

fn strictly_increasing<T, K: Ord>(rows: &[T], key: impl Fn(&T) -> K, table: &str) -> Result<()> {
    if rows.windows(2).all(|w| key(&w[0]) < key(&w[1])) {
        Ok(())
    } else {
        Err(corrupt(format!("{table} rows not in key order")))
    }
}

pub type DecodedBlobs = Vec<(String, Vec<u8>)>;

/// Parses and validates a canonical payload.
///
/// Besides the syntax this checks the trailing digest, key order,
/// referential integrity, that every audit trail replays to its
/// application's stored position, and that re-encoding reproduces the input
/// exactly.
pub fn decode_payload(bytes: &[u8]) -> Result<(Tables, DecodedBlobs)> {
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt("payload is not UTF-8"))?;
    let mut lines = Lines { text, pos: 0 };
    if lines.next_line()? != PAYLOAD_HEADER {
        return Err(corrupt("missing payload header"));
    }
    let meta: Vec<Meta> = lines.rows("meta")?;
    let [meta] = <[Meta; 1]>::try_from(meta).map_err(|_| corrupt("meta must hold one row"))?;
    let departments: Vec<crate::model::Department> = lines.rows("departments")?;
    let users: Vec<crate::access::UserAccount> = lines.rows("users")?;
    let applications: Vec<crate::model::Application> = lines.rows("applications")?;
    let events: Vec<crate::model::RoutingEvent> = lines.rows("events")?;
    let publish_records: Vec<crate::model::PublishRecord> = lines.rows("publish_records")?;
    let attachments: Vec<crate::attachments::Attachment> = lines.rows("attachments")?;
    let news: Vec<crate::news::NewsItem> = lines.rows("news")?;
    let blob_rows: Vec<BlobRow> = lines.rows("blobs")?;

    let body_end = lines.pos;
    let end = lines.next_line()?;
    let expected = format!("@end {}", hex::encode(Sha256::digest(&bytes[..body_end])));
    if end != expected {
        return Err(corrupt("trailing digest does not match"));
    }
    if lines.pos != bytes.len() {
        return Err(corrupt("data after end marker"));
    }

    strictly_increasing(&departments, |d| d.dept_id, "departments")?;
    strictly_increasing(&users, |u| u.user_id, "users")?;
    strictly_increasing(&applications, |a| a.app_id, "applications")?;
    strictly_increasing(&events, |e| e.event_id, "events")?;
    strictly_increasing(&publish_records, |p| p.app_id, "publish_records")?;
    strictly_increasing(&attachments, |a| a.attachment_id, "attachments")?;
    strictly_increasing(&news, |n| n.news_id, "news")?;
    strictly_increasing(&blob_rows, |b| b.digest.clone(), "blobs")?;

    let mut blobs = Vec::with_capacity(blob_rows.len());
    for row in blob_rows {
        let data = STANDARD
            .decode(&row.data)
            .map_err(|_| corrupt(format!("blob {} is not base64", row.digest)))?;
        if content_digest(&data) != row.digest {
            return Err(corrupt(format!("blob {} does not match its digest", row.digest)));
        }
        blobs.push((row.digest, data));
    }

    let tables = Tables::from_rows(Rows {
        meta,
        departments,
        users,
        applications,
        events,
        publish_records,
        attachments,
        news,
    });
    check_integrity(&tables)?;
    if encode_payload(&tables, &blobs)? != bytes {
        return Err(corrupt("payload is not in canonical form"));
    }
    Ok((tables, blobs))
}

fn check_integrity(t: &Tables) -> Result<()> {
    let m = t.meta();
    let max = |it: &mut dyn Iterator<Item = u64>| it.max().unwrap_or(0);
    let counters_ok = max(&mut t.departments.keys().map(|k| k.0)) <= m.next_dept_id
        && max(&mut t.users.keys().map(|k| k.0)) <= m.next_user_id
        && max(&mut t.applications.keys().map(|k| k.0)) <= m.next_app_id
        && max(&mut t.events.keys().map(|k| k.0)) <= m.next_event_id
        && max(&mut t.news.keys().map(|k| k.0)) <= m.next_news_id
        && max(&mut t.attachments.keys().map(|k| k.0)) <= m.next_attachment_id;
    if !counters_ok {
        return Err(corrupt("id counters behind existing rows"));
    }
    if t.index.dept_by_code.len() != t.departments.len() {
        return Err(corrupt("duplicate department code"));
    }
    if t.index.users_by_name.len() != t.users.len() {
        return Err(corrupt("duplicate username"));
    }
    if t.index.by_number.len() != t.applications.len() {
        return Err(corrupt("duplicate incoming number"));
    }
    for u in t.users.values() {
        if !t.departments.contains_key(&u.dept_id) {
            return Err(corrupt(format!("{} references a missing department", u.user_id)));
        }
    }
    for e in t.events.values() {
        if !t.applications.contains_key(&e.app_id) {
            return Err(corrupt(format!("{} references a missing application", e.event_id)));
        }
    }
    for app in t.applications.values() {
        if !t.departments.contains_key(&app.current_location) {
            return Err(corrupt(format!("{} is at a missing department", app.app_id)));
        }
        let pos = replay(t.events_of(app.app_id))
            .map_err(|e| corrupt(format!("{}: {e}", app.app_id)))?;
        if pos.location != app.current_location || pos.status != app.status {
            return Err(corrupt(format!("{} disagrees with its audit trail", app.app_id)));
        }
        if let Some(id) = app.attachment {
            if t.attachment(id).is_none_or(|a| a.app_id != app.app_id) {
                return Err(corrupt(format!("{} references a missing attachment", app.app_id)));
            }
        }
        let published = t.publish_records.contains_key(&app.app_id);
        if published != (app.status == crate::model::AppStatus::Published) {
            return Err(corrupt(format!("{} publish record mismatch", app.app_id)));
        }
    }
    let mut seen: BTreeSet<(i32, u32)> = BTreeSet::new();
    for p in t.publish_records.values() {
        let year = t.applications[&p.app_id].year;
        if !seen.insert((year, p.publish_no)) {
            return Err(corrupt(format!("publish number {} reused in {year}", p.publish_no)));
        }
    }
    Ok(())
}

fn deflate(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = DeflateEncoder::new(Vec::with_capacity(bytes.len() / 4), Compression::best());
    enc.write_all(bytes).map_err(Error::storage)?;
    enc.finish().map_err(Error::storage)
}

fn inflate(bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::with_capacity(bytes.len() * 4);
    DeflateDecoder::new(bytes).read_to_end(&mut out)?;
    Ok(out)
}

/// A verified backup: header fields plus the payload as stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackupArchive {
    format_version: u16,
    mode: BackupMode,
    created_at: Option<DateTime<Utc>>,
    table_counts: BTreeMap<String, u64>,
    checksum: [u8; 32],
    payload: Vec<u8>,
    plain: Vec<u8>,
}

type Summary = (Option<DateTime<Utc>>, BTreeMap<String, u64>);

fn summarize(plain: &[u8]) -> Result<Summary> {
    let text = std::str::from_utf8(plain).map_err(|_| corrupt("payload is not UTF-8"))?;
    let mut counts = BTreeMap::new();
    let mut created_at = None;
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let Some(rest) = line.strip_prefix('@') else {
            continue;
        };
        let Some((name, count)) = rest.split_once(' ') else {
            continue;
        };
        if name == "end" {
            break;
        }
        let count: u64 = count.parse().map_err(|_| corrupt("bad row count"))?;
        if name == "meta" {
            let meta: Meta = serde_json::from_str(lines.next().unwrap_or_default())
                .map_err(|e| corrupt(format!("meta: {e}")))?;
            created_at = meta.last_modified;
        } else if TABLES.contains(&name) {
            counts.insert(name.to_owned(), count);
        }
    }
    Ok((created_at, counts))
}

impl BackupArchive {
    /// Wraps a canonical payload.
    pub fn build(plain: Vec<u8>, mode: BackupMode) -> Result<Self> {
        let checksum: [u8; 32] = Sha256::digest(&plain).into();
        let payload = match mode {
            BackupMode::None => plain.clone(),
            BackupMode::Zipped => deflate(&plain)?,
        };
        let (created_at, table_counts) = summarize(&plain)?;
        Ok(BackupArchive {
            format_version: FORMAT_VERSION,
            mode,
            created_at,
            table_counts,
            checksum,
            payload,
            plain,
        })
    }

    pub fn format_version(&self) -> u16 {
        self.format_version
    }

    pub fn mode(&self) -> BackupMode {
        self.mode
    }

    /// Time of the last write captured by the snapshot (`None` for a store
    /// that was never written).
    pub fn created_at(&self) -> Option<DateTime<Utc>> {
        self.created_at
    }

    pub fn table_counts(&self) -> &BTreeMap<String, u64> {
        &self.table_counts
    }

    pub fn checksum(&self) -> &[u8; 32] {
        &self.checksum
    }

    pub fn checksum_hex(&self) -> String {
        hex::encode(self.checksum)
    }

    /// Payload bytes as stored in the file.
    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// The canonical (uncompressed) payload.
    pub fn canonical_payload(&self) -> &[u8] {
        &self.plain
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_be_bytes());
        out.push(self.mode.byte());
        out.extend_from_slice(&self.checksum);
        out.extend_from_slice(&(self.payload.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses an archive file and verifies its checksum.
    ///
    /// A payload that fails to inflate is reported as a checksum mismatch:
    /// either way its content is not what was written.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(corrupt("not a backup archive"));
        }
        let version = u16::from_be_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        let mode = BackupMode::from_byte(bytes[6]).ok_or_else(|| corrupt("unknown mode byte"))?;
        let checksum: [u8; 32] = bytes[7..39].try_into().expect("32-byte slice");
        let len = u64::from_be_bytes(bytes[39..47].try_into().expect("8-byte slice"));
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != len {
            return Err(corrupt(format!(
                "payload length {} does not match header {len}",
                payload.len()
            )));
        }
        let plain = match mode {
            BackupMode::None => payload.to_vec(),
            BackupMode::Zipped => inflate(payload).map_err(|_| Error::ChecksumMismatch)?,
        };
        if Sha256::digest(&plain).as_slice() != checksum {
            return Err(Error::ChecksumMismatch);
        }
        let (created_at, table_counts) = summarize(&plain)?;
        Ok(BackupArchive {
            format_version: version,
            mode,
            created_at,
            table_counts,
            checksum,
            payload: payload.to_vec(),
            plain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreReport {
    pub tables: BTreeMap<String, u64>,
    pub rows: u64,
    pub checksum_ok: bool,
}

impl Registry {
    /// Snapshot of the whole store, including attachment content.
    pub fn export_backup(&self, mode: BackupMode, admin: &UserContext) -> Result<BackupArchive> {
        admin.require_admin()?;
        let plain = self.export_payload()?;
        BackupArchive::build(plain, mode)
    }

    /// The canonical NONE payload of the current state.
    pub fn export_payload(&self) -> Result<Vec<u8>> {
        self.store().read(|t| {
            let digests: BTreeSet<&str> = t.attachments().map(|a| a.content_digest.as_str()).collect();
            let mut blobs = Vec::with_capacity(digests.len());
            for d in digests {
                let bytes = self
                    .blobs()
                    .get(d)?
                    .ok_or_else(|| Error::storage(format!("blob {d} missing")))?;
                blobs.push((d.to_owned(), bytes));
            }
            encode_payload(t, &blobs)
        })
    }

    /// Replaces the entire store with the archive's snapshot. All sessions
    /// end, since account ids may now refer to different people.
    pub fn import_backup(&self, archive: &BackupArchive, admin: &UserContext) -> Result<RestoreReport> {
        admin.require_admin()?;
        let (tables, blobs) = decode_payload(archive.canonical_payload())?;
        let wanted: BTreeSet<&str> = tables.attachments().map(|a| a.content_digest.as_str()).collect();
        let present: BTreeSet<&str> = blobs.iter().map(|(d, _)| d.as_str()).collect();
        if let Some(missing) = wanted.difference(&present).next() {
            return Err(corrupt(format!("blob {missing} missing from archive")));
        }
        for (digest, bytes) in &blobs {
            self.blobs().put(digest, bytes)?;
        }
        let counts = tables.row_counts();
        self.store().replace_all(tables)?;
        for stale in self.blobs().digests()? {
            if !present.contains(stale.as_str()) {
                self.blobs().remove(&stale)?;
            }
        }
        self.sessions().write().clear();

        let mut report_tables: BTreeMap<String, u64> =
            counts.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
        report_tables.insert("blobs".into(), blobs.len() as u64);
        Ok(RestoreReport {
            rows: report_tables.values().sum(),
            tables: report_tables,
            checksum_ok: true,
        })
    }

    /// Parses, verifies and imports a serialized archive.
    pub fn import_backup_bytes(&self, bytes: &[u8], admin: &UserContext) -> Result<RestoreReport> {
        admin.require_admin()?;
        let archive = BackupArchive::from_bytes(bytes)?;
        self.import_backup(&archive, admin)
    }
}
