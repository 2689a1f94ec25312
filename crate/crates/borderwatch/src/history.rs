//! Operator history queries.

use std::fmt::Write as _;
use std::time::Duration;

use borderwatch_core::protocol::{Event, Message, Role};
use chrono::DateTime;

use crate::client::{Client, ClientError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryQuery {
    pub device_id: Option<String>,
    pub from_ms: u64,
    pub to_ms: u64,
    pub limit: u64,
}

impl Default for HistoryQuery {
    fn default() -> Self {
        Self { device_id: None, from_ms: 0, to_ms: u64::MAX, limit: 1000 }
    }
}

pub fn fetch(server: &str, operator_token: &str, q: &HistoryQuery, timeout: Duration) -> Result<Vec<Event>, ClientError> {
    let mut client = Client::connect_timeout(server, timeout)?;
    client.login(Role::Operator, operator_token, timeout)?;
    client.send(&Message::HistoryRequest {
        device_id: q.device_id.clone(),
        from_ms: q.from_ms,
        to_ms: q.to_ms,
        limit: q.limit,
    })?;
    let events = client.recv_matching(timeout, |m| match m {
        Message::HistoryResponse { events } => Some(Ok(events.clone())),
        Message::Error { code, detail } => Some(Err(ClientError::Server { code: code.clone(), detail: detail.clone() })),
        _ => None,
    })??;
    client.close();
    Ok(events)
}

/// UTC wall-clock rendering of a millisecond timestamp.
pub fn format_ts(ms: u64) -> String {
    i64::try_from(ms)
        .ok()
        .and_then(DateTime::from_timestamp_millis)
        .map_or_else(|| ms.to_string(), |t| t.format("%Y-%m-%d %H:%M:%S%.3f UTC").to_string())
}

pub fn render_table(events: &[Event]) -> String {
    let mut out = String::new();
    let width = events.iter().map(|e| e.device_id.len()).max().unwrap_or(0).max(6);
    let _ = writeln!(out, "{:>8}  {:<27}  {:<width$}  text", "event", "time", "device");
    for e in events {
        let _ = writeln!(out, "{:>8}  {:<27}  {:<width$}  {}", e.event_id, format_ts(e.ts_ms), e.device_id, e.text);
    }
    out
}

pub fn render_json(events: &[Event]) -> String {
    serde_json::to_string_pretty(events).expect("events serialize")
}
