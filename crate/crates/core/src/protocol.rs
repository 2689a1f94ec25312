//! Newline-delimited JSON frames exchanged by devices, operators and the relay.
//!
//! Every frame is one JSON object on one line, `type` first, terminated by a
//! single LF. Decoding tolerates unknown fields and rejects missing ones.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

pub const PROTO_VERSION: u32 = 1;

/// Longest accepted frame, excluding the terminating LF.
pub const MAX_LINE_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Device,
    Operator,
}

impl Role {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "device" => Some(Role::Device),
            "operator" => Some(Role::Operator),
            _ => None,
        }
    }
}

/// Server-side view of a stored intrusion, as pushed to operators and
/// returned from history queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub event_id: u64,
    pub device_id: String,
    /// Server receive time; authoritative for ordering.
    pub ts_ms: u64,
    pub device_ts_ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Login {
        role: Role,
        auth: String,
        proto: u32,
    },
    LoginAck {
        ok: bool,
        id: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Notify {
        seq: u64,
        ts_ms: u64,
        text: String,
    },
    NotifyAck {
        seq: u64,
    },
    Heartbeat {
        ts_ms: u64,
    },
    Command {
        device_id: String,
        pin: String,
        value: i64,
        cmd_id: u64,
    },
    HwWrite {
        pin: String,
        value: i64,
        cmd_id: u64,
    },
    CommandAck {
        cmd_id: u64,
        delivered: bool,
    },
    Subscribe {
        devices: Vec<String>,
    },
    Event(Event),
    HistoryRequest {
        #[serde(skip_serializing_if = "Option::is_none")]
        device_id: Option<String>,
        from_ms: u64,
        to_ms: u64,
        limit: u64,
    },
    HistoryResponse {
        events: Vec<Event>,
    },
    Error {
        code: String,
        detail: String,
    },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Login { .. } => "login",
            Message::LoginAck { .. } => "login_ack",
            Message::Notify { .. } => "notify",
            Message::NotifyAck { .. } => "notify_ack",
            Message::Heartbeat { .. } => "heartbeat",
            Message::Command { .. } => "command",
            Message::HwWrite { .. } => "hw_write",
            Message::CommandAck { .. } => "command_ack",
            Message::Subscribe { .. } => "subscribe",
            Message::Event(_) => "event",
            Message::HistoryRequest { .. } => "history_request",
            Message::HistoryResponse { .. } => "history_response",
            Message::Error { .. } => "error",
        }
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Message::Error { code: code.to_owned(), detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame is {0} bytes, limit is {MAX_LINE_LEN}")]
    FrameTooLong(usize),
    #[error("malformed frame: {0}")]
    Syntax(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` has the wrong type, expected {expected}")]
    WrongType { field: &'static str, expected: &'static str },
}

/// Serializes `msg` as one LF-terminated line.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = encode_line(msg);
    out.push(b'\n');
    out
}

/// Same as [`encode`] without the trailing LF.
pub fn encode_line(msg: &Message) -> Vec<u8> {
    // Serializing these plain structs to a Vec cannot fail: every key is a
    // string and no field holds a non-finite float.
    serde_json::to_vec(msg).expect("message serialization is infallible")
}

/// Decodes one frame. A single trailing LF (optionally preceded by CR) is
/// accepted; any other newline inside the frame is a syntax error.
pub fn decode(line: &[u8]) -> Result<Message, DecodeError> {
    let line = strip_terminator(line);
    if line.len() > MAX_LINE_LEN {
        return Err(DecodeError::FrameTooLong(line.len()));
    }
    if line.contains(&b'\n') {
        return Err(DecodeError::Syntax("embedded newline".to_owned()));
    }
    let value: Value =
        serde_json::from_slice(line).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(DecodeError::Syntax("frame is not a JSON object".to_owned()));
    };
    decode_object(&map)
}

fn strip_terminator(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

/// Decodes a message from an already-parsed JSON object.
pub fn decode_object(map: &Map<String, Value>) -> Result<Message, DecodeError> {
    let f = Fields(map);
    let ty = f.str("type")?;
    let msg = match ty {
        "login" => {
            let role = f.str("role")?;
            Message::Login {
                role: Role::parse(role)
                    .ok_or(DecodeError::WrongType { field: "role", expected: "device|operator" })?,
                auth: f.string("auth")?,
                proto: u32::try_from(f.u64("proto")?)
                    .map_err(|_| DecodeError::WrongType { field: "proto", expected: "u32" })?,
            }
        }
        "login_ack" => Message::LoginAck {
            ok: f.bool("ok")?,
            id: f.string("id")?,
            error: f.opt_string("error")?,
        },
        "notify" => Message::Notify { seq: f.u64("seq")?, ts_ms: f.u64("ts_ms")?, text: f.string("text")? },
        "notify_ack" => Message::NotifyAck { seq: f.u64("seq")? },
        "heartbeat" => Message::Heartbeat { ts_ms: f.u64("ts_ms")? },
        "command" => Message::Command {
            device_id: f.string("device_id")?,
            pin: f.string("pin")?,
            value: f.i64("value")?,
            cmd_id: f.u64("cmd_id")?,
        },
        "hw_write" => Message::HwWrite { pin: f.string("pin")?, value: f.i64("value")?, cmd_id: f.u64("cmd_id")? },
        "command_ack" => Message::CommandAck { cmd_id: f.u64("cmd_id")?, delivered: f.bool("delivered")? },
        "subscribe" => {
            let raw = f.get("devices")?;
            let arr = raw
                .as_array()
                .ok_or(DecodeError::WrongType { field: "devices", expected: "array of strings" })?;
            let devices = arr
                .iter()
                .map(|v| v.as_str().map(ToOwned::to_owned))
                .collect::<Option<Vec<_>>>()
                .ok_or(DecodeError::WrongType { field: "devices", expected: "array of strings" })?;
            Message::Subscribe { devices }
        }
        "event" => Message::Event(decode_event(&f)?),
        "history_request" => Message::HistoryRequest {
            device_id: f.opt_string("device_id")?,
            from_ms: f.u64("from_ms")?,
            to_ms: f.u64("to_ms")?,
            limit: f.u64("limit")?,
        },
        "history_response" => {
            let raw = f.get("events")?;
            let arr = raw
                .as_array()
                .ok_or(DecodeError::WrongType { field: "events", expected: "array of events" })?;
            let events = arr
                .iter()
                .map(|v| match v {
                    Value::Object(m) => decode_event(&Fields(m)),
                    _ => Err(DecodeError::WrongType { field: "events", expected: "array of events" }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Message::HistoryResponse { events }
        }
        "error" => Message::Error { code: f.string("code")?, detail: f.string("detail")? },
        other => return Err(DecodeError::UnknownType(other.to_owned())),
    };
    Ok(msg)
}

fn decode_event(f: &Fields<'_>) -> Result<Event, DecodeError> {
    Ok(Event {
        event_id: f.u64("event_id")?,
        device_id: f.string("device_id")?,
        ts_ms: f.u64("ts_ms")?,
        device_ts_ms: f.u64("device_ts_ms")?,
        text: f.string("text")?,
    })
}

/// Typed accessors over a JSON object.
pub(crate) struct Fields<'a>(pub(crate) &'a Map<String, Value>);

impl<'a> Fields<'a> {
    pub(crate) fn get(&self, name: &'static str) -> Result<&'a Value, DecodeError> {
        self.0.get(name).ok_or(DecodeError::MissingField(name))
    }

    pub(crate) fn str(&self, name: &'static str) -> Result<&'a str, DecodeError> {
        self.get(name)?
            .as_str()
            .ok_or(DecodeError::WrongType { field: name, expected: "string" })
    }

    pub(crate) fn string(&self, name: &'static str) -> Result<String, DecodeError> {
        self.str(name).map(ToOwned::to_owned)
    }

    pub(crate) fn opt_string(&self, name: &'static str) -> Result<Option<String>, DecodeError> {
        match self.0.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(DecodeError::WrongType { field: name, expected: "string or null" }),
        }
    }

    pub(crate) fn u64(&self, name: &'static str) -> Result<u64, DecodeError> {
        self.get(name)?
            .as_u64()
            .ok_or(DecodeError::WrongType { field: name, expected: "unsigned integer" })
    }

    pub(crate) fn i64(&self, name: &'static str) -> Result<i64, DecodeError> {
        self.get(name)?
            .as_i64()
            .ok_or(DecodeError::WrongType { field: name, expected: "integer" })
    }

    pub(crate) fn bool(&self, name: &'static str) -> Result<bool, DecodeError> {
        self.get(name)?
            .as_bool()
            .ok_or(DecodeError::WrongType { field: name, expected: "boolean" })
    }
}

/// Splits a byte stream into frames.
///
/// Bytes are buffered until a LF arrives. A line that grows past
/// [`MAX_LINE_LEN`] is a framing fault; the caller should drop the
/// connection.
#[derive(Debug, Default)]
pub struct LineFramer {
    buf: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("frame exceeds {MAX_LINE_LEN} bytes without a line terminator")]
pub struct FrameOverflow;

impl LineFramer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `bytes` and returns every complete line (without the LF).
    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<Vec<u8>>, FrameOverflow> {
        let mut lines = Vec::new();
        for &b in bytes {
            if b == b'\n' {
                lines.push(core::mem::take(&mut self.buf));
            } else {
                if self.buf.len() > MAX_LINE_LEN {
                    // +1 leaves room for a CR before the LF
                    return Err(FrameOverflow);
                }
                self.buf.push(b);
            }
        }
        Ok(lines)
    }

    /// Bytes received after the last LF.
    pub fn pending(&self) -> &[u8] {
        &self.buf
    }
}
