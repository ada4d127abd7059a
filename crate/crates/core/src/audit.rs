//! Audit events and the append-only event log.
//!
//! The log is the source of truth for the repository. Each record is framed as
//!
//! ```text
//! <byte length of JSON> <space> <JSON object> <newline>
//! ```
//!
//! and the JSON object carries a `record_version` next to the event itself.
//! A torn final record (crash mid-append) is discarded on open; damage
//! anywhere else is reported as [`Error::LogCorrupt`].

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogEntry;
use crate::error::{Error, Result};
use crate::patient::Patient;
use crate::report::Report;
use crate::results::{EntryId, OverrideRecord, RejectionRecord, ReportId, ResultEntry};

pub const RECORD_VERSION: u32 = 1;
const LOG_FILE: &str = "events.log";
const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Submitted,
    Overridden,
    Rejected,
    Finalized,
    CatalogImported,
    CatalogVerified,
    CatalogEdited,
    PatientRegistered,
    SignedOff,
}

/// The data needed to re-apply an event during replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    CatalogImported {
        catalog_version: u64,
        entries: Vec<CatalogEntry>,
    },
    CatalogVerified {
        catalog_version: u64,
        slno: u32,
        specialist_id: String,
    },
    CatalogEdited {
        catalog_version: u64,
        entry: CatalogEntry,
    },
    PatientRegistered {
        patient: Patient,
    },
    Submitted {
        entry: ResultEntry,
    },
    Overridden {
        record: OverrideRecord,
    },
    Rejected {
        record: RejectionRecord,
    },
    Finalized {
        entry_id: EntryId,
        report_id: ReportId,
    },
    SignedOff {
        report: Report,
    },
}

impl Payload {
    pub fn action(&self) -> Action {
        match self {
            Payload::CatalogImported { .. } => Action::CatalogImported,
            Payload::CatalogVerified { .. } => Action::CatalogVerified,
            Payload::CatalogEdited { .. } => Action::CatalogEdited,
            Payload::PatientRegistered { .. } => Action::PatientRegistered,
            Payload::Submitted { .. } => Action::Submitted,
            Payload::Overridden { .. } => Action::Overridden,
            Payload::Rejected { .. } => Action::Rejected,
            Payload::Finalized { .. } => Action::Finalized,
            Payload::SignedOff { .. } => Action::SignedOff,
        }
    }

    /// The result entry this event is about, if any.
    pub fn entry_id(&self) -> Option<EntryId> {
        match self {
            Payload::Submitted { entry } => Some(entry.entry_id),
            Payload::Overridden { record } => Some(record.entry_id),
            Payload::Rejected { record } => Some(record.entry_id),
            Payload::Finalized { entry_id, .. } => Some(*entry_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub sequence_no: u64,
    pub at: DateTime<Utc>,
    pub actor: String,
    pub action: Action,
    pub payload: Payload,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    record_version: u32,
    event: &'a AuditEvent,
}

#[derive(Deserialize)]
struct RecordIn {
    record_version: u32,
    event: AuditEvent,
}

pub fn encode_record(event: &AuditEvent) -> Vec<u8> {
    let json = serde_json::to_vec(&RecordOut {
        record_version: RECORD_VERSION,
        event,
    })
    .expect("audit events always serialize");
    let mut out = format!("{} ", json.len()).into_bytes();
    out.extend_from_slice(&json);
    out.push(b'\n');
    out
}

/// Decoded log contents. `valid_len` is the byte length of the complete
/// records; anything after it is a torn tail.
#[derive(Debug)]
pub struct Decoded {
    pub events: Vec<AuditEvent>,
    pub valid_len: usize,
}

pub fn decode_records(bytes: &[u8]) -> Result<Decoded> {
    let mut events = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        let Some(space) = rest.iter().position(|b| *b == b' ') else {
            if rest.iter().all(u8::is_ascii_digit) {
                break;
            }
            return Err(Error::LogCorrupt(format!("bad record prefix at byte {pos}")));
        };
        let len: usize = std::str::from_utf8(&rest[..space])
            .ok()
            .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::LogCorrupt(format!("bad record length at byte {pos}")))?;
        let body_start = space + 1;
        let body_end = body_start + len;
        if rest.len() < body_end + 1 {
            break;
        }
        if rest[body_end] != b'\n' {
            return Err(Error::LogCorrupt(format!("record at byte {pos} is not newline-terminated")));
        }
        let record: RecordIn = serde_json::from_slice(&rest[body_start..body_end])
            .map_err(|e| Error::LogCorrupt(format!("record at byte {pos}: {e}")))?;
        if record.record_version != RECORD_VERSION {
            return Err(Error::LogCorrupt(format!(
                "unsupported record version {} at byte {pos}",
                record.record_version
            )));
        }
        if record.event.action != record.event.payload.action() {
            return Err(Error::LogCorrupt(format!("action/payload mismatch at byte {pos}")));
        }
        events.push(record.event);
        pos += body_end + 1;
    }
    Ok(Decoded {
        events,
        valid_len: pos,
    })
}

/// File-backed log under a store directory. Holds an exclusive lock on the
/// directory for as long as it is open.
#[derive(Debug)]
pub struct EventLog {
    dir: PathBuf,
    file: File,
    _lock: File,
}

impl EventLog {
    /// Opens (creating if needed) the log in `dir` and returns it with the
    /// events already recorded.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, Vec<AuditEvent>)> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        lock.try_lock().map_err(|_| {
            Error::Storage(format!("store {} is in use by another process", dir.display()))
        })?;

        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .append(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let decoded = decode_records(&bytes)?;
        if decoded.valid_len < bytes.len() {
            file.set_len(decoded.valid_len as u64)?;
            file.sync_data()?;
        }
        Ok((
            Self {
                dir,
                file,
                _lock: lock,
            },
            decoded.events,
        ))
    }

    /// Appends events as one write followed by a data sync.
    pub fn append(&mut self, events: &[AuditEvent]) -> Result<()> {
        let buf: Vec<u8> = events.iter().flat_map(encode_record).collect();
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
