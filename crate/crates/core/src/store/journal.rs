//! Append-only commit journal.
//!
//! One line per commit: 16 hex characters of the SHA-256 of the JSON body, a
//! space, the JSON body, a newline. Opening stops at the first line that is
//! incomplete or fails its check and truncates the file there.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::Commit;

/// Simulated failures, armed with [`Store::inject_fault`](super::Store::inject_fault).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The transaction dies after staging an event and before staging the
    /// next write.
    CrashAfterEvent,
    /// The commit record is only half written before the process "dies".
    TornJournalWrite,
}

pub(crate) struct Journal {
    path: PathBuf,
    file: File,
    // set after a failed append; the tail is unknown until the next open
    poisoned: bool,
}

fn line_check(body: &[u8]) -> String {
    hex::encode(&Sha256::digest(body)[..8])
}

impl Journal {
    pub fn open(path: PathBuf) -> Result<(Self, Vec<Commit>)> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(Error::storage)?;
        let mut commits = Vec::new();
        let mut good_len = 0u64;
        {
            file.seek(SeekFrom::Start(0)).map_err(Error::storage)?;
            let mut reader = BufReader::new(&file);
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line).map_err(Error::storage)?;
                if n == 0 || line.last() != Some(&b'\n') {
                    break;
                }
                match parse_line(&line[..n - 1]) {
                    Some(c) => {
                        commits.push(c);
                        good_len += n as u64;
                    }
                    None => break,
                }
            }
        }
        let total = file.metadata().map_err(Error::storage)?.len();
        if total != good_len {
            tracing::warn!(
                path = %path.display(),
                dropped = total - good_len,
                "discarding incomplete journal tail"
            );
            file.set_len(good_len).map_err(Error::storage)?;
        }
        Ok((
            Journal {
                path,
                file,
                poisoned: false,
            },
            commits,
        ))
    }

    pub fn append(&mut self, commit: &Commit, fault: Option<Fault>) -> Result<()> {
        if self.poisoned {
            return Err(Error::storage("journal unusable after a failed write; reopen the store"));
        }
        let body = serde_json::to_vec(commit).map_err(Error::storage)?;
        let mut line = Vec::with_capacity(body.len() + 18);
        line.extend_from_slice(line_check(&body).as_bytes());
        line.push(b' ');
        line.extend_from_slice(&body);
        line.push(b'\n');
        if fault == Some(Fault::TornJournalWrite) {
            self.poisoned = true;
            self.file
                .write_all(&line[..line.len() / 2])
                .map_err(Error::storage)?;
            return Err(Error::storage("injected torn journal write"));
        }
        let written = self
            .file
            .write_all(&line)
            .and_then(|_| self.file.sync_data());
        if let Err(e) = written {
            self.poisoned = true;
            return Err(Error::storage(e));
        }
        Ok(())
    }

    pub fn reset(&mut self) -> Result<()> {
        self.file.set_len(0).map_err(Error::storage)?;
        self.file.sync_all().map_err(Error::storage)?;
        self.poisoned = false;
        tracing::debug!(path = %self.path.display(), "journal reset");
        Ok(())
    }
}

fn parse_line(line: &[u8]) -> Option<Commit> {
    let (check, body) = (line.get(..16)?, line.get(17..)?);
    if line.get(16) != Some(&b' ') || line_check(body).as_bytes() != check {
        return None;
    }
    serde_json::from_slice(body).ok()
}
