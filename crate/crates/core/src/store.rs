//! Append-only NDJSON event log with per-record CRC32C checksums.
//!
//! Each line is `{"seq":N,"kind":"...","at":"...","payload":{...},"checksum":"xxxxxxxx"}`.
//! The checksum covers the line with the `,"checksum":"..."` member removed.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::CampaignConfig;
use crate::domain::{CampaignId, ConceptId, GameConcept, Vote, VoterToken};
use crate::engine::IterationRecord;

/// Whether a recorded vote was the voter's first on that concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteOutcome {
    Accepted,
    Overwritten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    CampaignCreated {
        campaign_id: CampaignId,
        config: Box<CampaignConfig>,
        voter_salt: String,
    },
    CampaignStarted {},
    CampaignStopped {},
    ConceptCreated {
        concept: Box<GameConcept>,
        ordinal: u64,
    },
    ConceptPublished {
        concept_id: ConceptId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channel_ref: Option<String>,
    },
    /// `value: None` is a retraction.
    VoteRecorded {
        concept_id: ConceptId,
        voter_token: VoterToken,
        value: Option<Vote>,
        outcome: VoteOutcome,
    },
    ActivationCompleted {
        record: IterationRecord,
    },
    ConceptRetired {
        concept_id: ConceptId,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::CampaignCreated { .. } => "campaign_created",
            EventBody::CampaignStarted {} => "campaign_started",
            EventBody::CampaignStopped {} => "campaign_stopped",
            EventBody::ConceptCreated { .. } => "concept_created",
            EventBody::ConceptPublished { .. } => "concept_published",
            EventBody::VoteRecorded { .. } => "vote_recorded",
            EventBody::ActivationCompleted { .. } => "activation_completed",
            EventBody::ConceptRetired { .. } => "concept_retired",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub body: EventBody,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full")]
    StorageFull,
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("log {0} already contains events")]
    AlreadyExists(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path, source: io::Error) -> StoreError {
    if source.kind() == io::ErrorKind::StorageFull {
        StoreError::StorageFull
    } else {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

const CHECKSUM_OPEN: &str = ",\"checksum\":\"";
/// `,"checksum":"` + 8 hex digits + `"}`.
const CHECKSUM_SUFFIX_LEN: usize = CHECKSUM_OPEN.len() + 8 + 2;

fn format_at(at: &DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Drops sub-millisecond precision, which the log cannot represent.
pub fn log_precision(at: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(at.timestamp_millis()).expect("millisecond timestamp in range")
}

/// The exact line (without newline) for an event.
pub fn encode_line(event: &Event) -> String {
    let tagged = serde_json::to_value(&event.body).expect("event bodies always serialize");
    let payload = tagged.get("payload").cloned().unwrap_or_else(|| Value::Object(Default::default()));
    let prefix = format!(
        "{{\"seq\":{},\"kind\":\"{}\",\"at\":\"{}\",\"payload\":{}",
        event.seq,
        event.body.kind(),
        format_at(&event.at),
        payload
    );
    let crc = crc32c::crc32c_append(crc32c::crc32c(prefix.as_bytes()), b"}");
    format!("{prefix}{CHECKSUM_OPEN}{crc:08x}\"}}")
}

#[derive(Deserialize)]
struct RawLine {
    seq: u64,
    kind: String,
    at: String,
    payload: Value,
}

/// Parses and verifies one line. `expected_seq` is the seq this line must carry.
pub fn decode_line(line: &str, expected_seq: u64) -> Result<Event, String> {
    let corrupt = |why: &str| why.to_string();
    if line.len() < CHECKSUM_SUFFIX_LEN || !line.ends_with("\"}") {
        return Err(corrupt("truncated record"));
    }
    let cut = line.len() - CHECKSUM_SUFFIX_LEN;
    if !line.is_char_boundary(cut) || !line[cut..].starts_with(CHECKSUM_OPEN) {
        return Err(corrupt("missing checksum"));
    }
    let hex = &line[cut + CHECKSUM_OPEN.len()..line.len() - 2];
    let stored = u32::from_str_radix(hex, 16).map_err(|_| corrupt("malformed checksum"))?;
    let actual = crc32c::crc32c_append(crc32c::crc32c(line[..cut].as_bytes()), b"}");
    if stored != actual {
        return Err(format!("checksum mismatch (stored {hex}, computed {actual:08x})"));
    }
    let raw: RawLine = serde_json::from_str(line).map_err(|e| format!("unparseable record: {e}"))?;
    if raw.seq != expected_seq {
        return Err(format!("expected seq {expected_seq}, found {}", raw.seq));
    }
    let at = DateTime::parse_from_rfc3339(&raw.at).map_err(|e| format!("bad timestamp: {e}"))?.with_timezone(&Utc);
    let body: EventBody = serde_json::from_value(serde_json::json!({ "kind": raw.kind, "payload": raw.payload }))
        .map_err(|e| format!("bad {} payload: {e}", raw.kind))?;
    Ok(Event { seq: raw.seq, at, body })
}

/// Result of scanning a log image.
#[derive(Debug)]
pub struct Scan {
    pub events: Vec<Event>,
    /// Byte length of the valid prefix.
    pub valid_len: usize,
    /// First invalid record, if any: its expected seq, the reason, and whether
    /// it is the final line of the image.
    pub fault: Option<(u64, String, bool)>,
}

pub fn scan(bytes: &[u8]) -> Scan {
    scan_from(bytes, 0, 1)
}

/// Continues a scan at byte `start`, a record boundary whose record carries
/// `first_seq`. Only events from `start` on are returned; `valid_len` stays
/// absolute.
pub fn scan_from(bytes: &[u8], start: usize, first_seq: u64) -> Scan {
    let mut events = Vec::new();
    let mut pos = start;
    while pos < bytes.len() {
        let seq = first_seq + events.len() as u64;
        let (line, next, terminated) = match bytes[pos..].iter().position(|&b| b == b'\n') {
            Some(i) => (&bytes[pos..pos + i], pos + i + 1, true),
            None => (&bytes[pos..], bytes.len(), false),
        };
        let last = next >= bytes.len();
        let decoded = std::str::from_utf8(line).map_err(|_| "invalid utf-8".to_string()).and_then(|l| decode_line(l, seq));
        match decoded {
            Ok(e) => {
                events.push(e);
                pos = next;
                if !terminated {
                    // Complete record missing only its newline.
                    return Scan { events, valid_len: bytes.len(), fault: None };
                }
            }
            Err(reason) => return Scan { events, valid_len: pos, fault: Some((seq, reason, last)) },
        }
    }
    Scan { events, valid_len: pos, fault: None }
}

/// Reads and validates a whole log.
pub fn read_log(path: &Path) -> Result<Vec<Event>, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    events_from_bytes(&bytes)
}

pub fn events_from_bytes(bytes: &[u8]) -> Result<Vec<Event>, StoreError> {
    let s = scan(bytes);
    match s.fault {
        Some((seq, reason, _)) => Err(StoreError::CorruptLog { seq, reason }),
        None => Ok(s.events),
    }
}

enum Sink {
    File { file: File, path: PathBuf, sync: bool },
    Memory(Vec<u8>),
}

/// Single-writer handle. Every append is written (and, for durable files,
/// synced) before its seq is returned.
pub struct EventLog {
    sink: Sink,
    next_seq: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { sink: Sink::Memory(Vec::new()), next_seq: 1 }
    }

    /// New log file. Fails if the file exists and is non-empty.
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        if path.metadata().map(|m| m.len() > 0).unwrap_or(false) {
            return Err(StoreError::AlreadyExists(path.to_path_buf()));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { sink: Sink::File { file, path: path.to_path_buf(), sync: true }, next_seq: 1 })
    }

    /// Opens an existing log for appending. A torn final record left by a
    /// crash is cut off; corruption anywhere else is an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>), StoreError> {
        let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(|e| io_err(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
        let s = scan(&bytes);
        let mut valid_len = s.valid_len;
        match s.fault {
            Some((seq, reason, true)) => {
                log::warn!("{}: dropping torn record at seq {seq} ({reason})", path.display());
                file.set_len(valid_len as u64).map_err(|e| io_err(path, e))?;
            }
            Some((seq, reason, false)) => return Err(StoreError::CorruptLog { seq, reason }),
            None => {}
        }
        file.seek(SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
        if valid_len > 0 && bytes[valid_len - 1] != b'\n' {
            file.write_all(b"\n").map_err(|e| io_err(path, e))?;
            valid_len += 1;
        }
        file.sync_data().map_err(|e| io_err(path, e))?;
        log::debug!("{}: {} events, {valid_len} bytes", path.display(), s.events.len());
        let next_seq = s.events.len() as u64 + 1;
        Ok((Self { sink: Sink::File { file, path: path.to_path_buf(), sync: true }, next_seq }, s.events))
    }

    /// Skips fsync after each append. For reproducible runs that can simply be redone.
    pub fn without_sync(mut self) -> Self {
        if let Sink::File { sync, .. } = &mut self.sink {
            *sync = false;
        }
        self
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends and returns the event exactly as a reader will decode it.
    pub fn append(&mut self, body: EventBody, at: DateTime<Utc>) -> Result<Event, StoreError> {
        let event = Event { seq: self.next_seq, at: log_precision(at), body };
        let mut line = encode_line(&event);
        line.push('\n');
        match &mut self.sink {
            Sink::Memory(buf) => buf.extend_from_slice(line.as_bytes()),
            Sink::File { file, path, sync } => {
                file.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
                if *sync {
                    file.sync_data().map_err(|e| io_err(path, e))?;
                }
            }
        }
        self.next_seq += 1;
        Ok(event)
    }

    /// Bytes written so far, for in-memory logs.
    pub fn memory_bytes(&self) -> Option<&[u8]> {
        match &self.sink {
            Sink::Memory(buf) => Some(buf),
            Sink::File { .. } => None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.sink {
            Sink::File { path, .. } => Some(path),
            Sink::Memory(_) => None,
        }
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Sink::File { file, path, .. } = &mut self.sink {
            file.sync_data().map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }
}
