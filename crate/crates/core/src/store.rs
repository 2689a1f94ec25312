//! Intrusion event records, the queryable index and the log line format.
//!
//! The index is storage-agnostic. [`MemoryLog`] keeps it in memory only; the
//! std companion crate wraps the same index around an append-only file.
//!
//! Log lines reuse the wire schema: an intrusion is an `event` frame plus
//! `device_seq`, and a command audit is a `command_audit` object.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::protocol::{DecodeError, Event, Fields};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntrusionEvent {
    pub event_id: u64,
    pub device_id: String,
    pub device_seq: u64,
    pub device_ts_ms: u64,
    pub server_ts_ms: u64,
    pub text: String,
}

/// An intrusion before the store has assigned its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewEvent {
    pub device_id: String,
    pub device_seq: u64,
    pub device_ts_ms: u64,
    pub server_ts_ms: u64,
    pub text: String,
}

impl NewEvent {
    fn with_id(self, event_id: u64) -> IntrusionEvent {
        IntrusionEvent {
            event_id,
            device_id: self.device_id,
            device_seq: self.device_seq,
            device_ts_ms: self.device_ts_ms,
            server_ts_ms: self.server_ts_ms,
            text: self.text,
        }
    }
}

impl IntrusionEvent {
    pub fn to_wire(&self) -> Event {
        Event {
            event_id: self.event_id,
            device_id: self.device_id.clone(),
            ts_ms: self.server_ts_ms,
            device_ts_ms: self.device_ts_ms,
            text: self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommandAudit {
    pub cmd_id: u64,
    pub operator_id: String,
    pub device_id: String,
    pub pin: String,
    pub value: i64,
    pub server_ts_ms: u64,
    pub delivered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended(u64),
    Duplicate,
}

/// Time-range query; bounds are inclusive and apply to the server timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub device_id: Option<String>,
    pub from_ms: u64,
    pub to_ms: u64,
    pub limit: usize,
}

impl Query {
    pub fn all() -> Self {
        Self { device_id: None, from_ms: 0, to_ms: u64::MAX, limit: usize::MAX }
    }
}

/// Durable home for intrusion events and command audits.
pub trait EventLog {
    type Error: core::fmt::Debug + core::fmt::Display;

    /// Appends unless `(device_id, device_seq)` is already stored. The record
    /// must be durable when this returns `Ok`.
    fn append_event(&mut self, candidate: NewEvent) -> Result<AppendOutcome, Self::Error>;

    fn append_audit(&mut self, audit: CommandAudit) -> Result<(), Self::Error>;

    fn query(&self, q: &Query) -> Vec<IntrusionEvent>;

    fn next_cmd_id(&self) -> u64;
}

/// In-memory index of events and audits.
#[derive(Debug, Clone, Default)]
pub struct EventIndex {
    events: Vec<IntrusionEvent>,
    keys: BTreeSet<(String, u64)>,
    audits: Vec<CommandAudit>,
    audit_ids: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("event id {got} does not follow {last}")]
    NonMonotonicId { last: u64, got: u64 },
    #[error("duplicate event key ({0}, {1})")]
    DuplicateKey(String, u64),
    #[error("duplicate command id {0}")]
    DuplicateCmdId(u64),
}

impl EventIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_event_id(&self) -> u64 {
        self.events.last().map_or(1, |e| e.event_id + 1)
    }

    pub fn next_cmd_id(&self) -> u64 {
        self.audit_ids.last().map_or(1, |id| id + 1)
    }

    pub fn contains(&self, device_id: &str, device_seq: u64) -> bool {
        // BTreeSet<(String, u64)> cannot be probed with (&str, u64) without
        // an owned key.
        self.keys.contains(&(device_id.to_string(), device_seq))
    }

    /// Assigns the next id to `candidate` without recording it. Returns
    /// `None` for a duplicate.
    pub fn prepare(&self, candidate: NewEvent) -> Option<IntrusionEvent> {
        if self.contains(&candidate.device_id, candidate.device_seq) {
            return None;
        }
        Some(candidate.with_id(self.next_event_id()))
    }

    /// Records an event that already carries its id (used by recovery and
    /// after a successful durable write).
    pub fn insert(&mut self, event: IntrusionEvent) -> Result<(), IndexError> {
        if let Some(last) = self.events.last() {
            if event.event_id <= last.event_id {
                return Err(IndexError::NonMonotonicId { last: last.event_id, got: event.event_id });
            }
        }
        if !self.keys.insert((event.device_id.clone(), event.device_seq)) {
            return Err(IndexError::DuplicateKey(event.device_id, event.device_seq));
        }
        self.events.push(event);
        Ok(())
    }

    pub fn insert_audit(&mut self, audit: CommandAudit) -> Result<(), IndexError> {
        if !self.audit_ids.insert(audit.cmd_id) {
            return Err(IndexError::DuplicateCmdId(audit.cmd_id));
        }
        self.audits.push(audit);
        Ok(())
    }

    pub fn query(&self, q: &Query) -> Vec<IntrusionEvent> {
        if q.from_ms > q.to_ms || q.limit == 0 {
            return Vec::new();
        }
        self.events
            .iter()
            .filter(|e| q.from_ms <= e.server_ts_ms && e.server_ts_ms <= q.to_ms)
            .filter(|e| q.device_id.as_deref().is_none_or(|d| d == e.device_id))
            .take(q.limit)
            .cloned()
            .collect()
    }

    pub fn events(&self) -> &[IntrusionEvent] {
        &self.events
    }

    pub fn audits(&self) -> &[CommandAudit] {
        &self.audits
    }
}

/// Volatile [`EventLog`]; used by the simulator and tests.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    index: EventIndex,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn index(&self) -> &EventIndex {
        &self.index
    }
}

impl EventLog for MemoryLog {
    type Error = IndexError;

    fn append_event(&mut self, candidate: NewEvent) -> Result<AppendOutcome, IndexError> {
        match self.index.prepare(candidate) {
            None => Ok(AppendOutcome::Duplicate),
            Some(ev) => {
                let id = ev.event_id;
                self.index.insert(ev)?;
                Ok(AppendOutcome::Appended(id))
            }
        }
    }

    fn append_audit(&mut self, audit: CommandAudit) -> Result<(), IndexError> {
        self.index.insert_audit(audit)
    }

    fn query(&self, q: &Query) -> Vec<IntrusionEvent> {
        self.index.query(q)
    }

    fn next_cmd_id(&self) -> u64 {
        self.index.next_cmd_id()
    }
}

/// One line of the on-disk log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogRecord {
    Event(IntrusionEvent),
    Audit(CommandAudit),
}

#[derive(Serialize)]
struct EventLine<'a> {
    #[serde(rename = "type")]
    ty: &'static str,
    event_id: u64,
    device_id: &'a str,
    ts_ms: u64,
    device_ts_ms: u64,
    text: &'a str,
    device_seq: u64,
}

#[derive(Serialize)]
struct AuditLine<'a> {
    #[serde(rename = "type")]
    ty: &'static str,
    #[serde(flatten)]
    audit: &'a CommandAudit,
}

impl LogRecord {
    /// One LF-terminated JSON line.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = match self {
            LogRecord::Event(e) => serde_json::to_vec(&EventLine {
                ty: "event",
                event_id: e.event_id,
                device_id: &e.device_id,
                ts_ms: e.server_ts_ms,
                device_ts_ms: e.device_ts_ms,
                text: &e.text,
                device_seq: e.device_seq,
            }),
            LogRecord::Audit(a) => serde_json::to_vec(&AuditLine { ty: "command_audit", audit: a }),
        }
        .expect("log record serialization is infallible");
        out.push(b'\n');
        out
    }

    /// Parses one line (without its LF).
    pub fn decode(line: &[u8]) -> Result<Self, DecodeError> {
        let value: Value =
            serde_json::from_slice(line).map_err(|e| DecodeError::Syntax(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(DecodeError::Syntax("record is not a JSON object".to_string()));
        };
        let f = Fields(&map);
        match f.str("type")? {
            "event" => Ok(LogRecord::Event(IntrusionEvent {
                event_id: f.u64("event_id")?,
                device_id: f.string("device_id")?,
                device_seq: f.u64("device_seq")?,
                device_ts_ms: f.u64("device_ts_ms")?,
                server_ts_ms: f.u64("ts_ms")?,
                text: f.string("text")?,
            })),
            "command_audit" => Ok(LogRecord::Audit(CommandAudit {
                cmd_id: f.u64("cmd_id")?,
                operator_id: f.string("operator_id")?,
                device_id: f.string("device_id")?,
                pin: f.string("pin")?,
                value: f.i64("value")?,
                server_ts_ms: f.u64("server_ts_ms")?,
                delivered: f.bool("delivered")?,
            })),
            other => Err(DecodeError::UnknownType(other.to_string())),
        }
    }
}
