//! Relay server logic, independent of any transport.
//!
//! The host assigns a [`ConnId`] to each connection, feeds decoded frames to
//! [`Relay::handle_frame`] and carries out the returned [`Outbound`] actions.
//! The relay authenticates sessions by token, persists intrusions through an
//! [`EventLog`], fans events out to subscribed operators, routes alarm
//! commands to live devices and answers history queries.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{DecodeError, Message, Role, PROTO_VERSION};
use crate::store::{AppendOutcome, CommandAudit, EventLog, NewEvent, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Send(ConnId, Message),
    /// Close after any frames queued before this action.
    Close(ConnId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub token: String,
    pub device_id: String,
    #[serde(default)]
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub token: String,
    pub operator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("token registered twice")]
    DuplicateToken,
    #[error("device id `{0}` registered twice")]
    DuplicateDevice(String),
    #[error("operator id `{0}` registered twice")]
    DuplicateOperator(String),
}

/// Known devices and operators, keyed by token.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    devices: BTreeMap<String, DeviceEntry>,
    device_ids: BTreeMap<String, String>,
    operators: BTreeMap<String, OperatorEntry>,
}

impl Registry {
    pub fn new(
        devices: impl IntoIterator<Item = DeviceEntry>,
        operators: impl IntoIterator<Item = OperatorEntry>,
    ) -> Result<Self, RegistryError> {
        let mut reg = Registry::default();
        let mut operator_ids = BTreeMap::new();
        for d in devices {
            if reg.devices.contains_key(&d.token) {
                return Err(RegistryError::DuplicateToken);
            }
            if reg.device_ids.insert(d.device_id.clone(), d.token.clone()).is_some() {
                return Err(RegistryError::DuplicateDevice(d.device_id));
            }
            reg.devices.insert(d.token.clone(), d);
        }
        for o in operators {
            if reg.devices.contains_key(&o.token) || reg.operators.contains_key(&o.token) {
                return Err(RegistryError::DuplicateToken);
            }
            if operator_ids.insert(o.operator_id.clone(), ()).is_some() {
                return Err(RegistryError::DuplicateOperator(o.operator_id));
            }
            reg.operators.insert(o.token.clone(), o);
        }
        Ok(reg)
    }

    pub fn device_by_token(&self, token: &str) -> Option<&DeviceEntry> {
        self.devices.get(token)
    }

    pub fn operator_by_token(&self, token: &str) -> Option<&OperatorEntry> {
        self.operators.get(token)
    }

    pub fn device(&self, device_id: &str) -> Option<&DeviceEntry> {
        self.device_ids.get(device_id).and_then(|t| self.devices.get(t))
    }
}

/// Admin-written notification text. `{device}` and `{text}` are substituted;
/// any other brace sequence is kept literally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NotificationTemplate(String);

impl Default for NotificationTemplate {
    fn default() -> Self {
        Self(String::from("{text}"))
    }
}

impl NotificationTemplate {
    pub fn new(template: impl Into<String>) -> Self {
        Self(template.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn render(&self, device: &str, text: &str) -> String {
        let mut out = String::with_capacity(self.0.len() + text.len());
        let mut rest = self.0.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix("{device}") {
                out.push_str(device);
                rest = after;
            } else if let Some(after) = tail.strip_prefix("{text}") {
                out.push_str(text);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }
}

/// Subscription pattern: `*` matches every device, `prefix*` matches by
/// prefix, anything else is an exact device id.
pub fn pattern_matches(pattern: &str, device_id: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => device_id.starts_with(prefix),
        None => pattern == device_id,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Session {
    Fresh,
    Device { device_id: String },
    Operator { operator_id: String, patterns: Vec<String> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayStats {
    pub logins_accepted: u64,
    pub logins_rejected: u64,
    pub sessions_evicted: u64,
    pub events_stored: u64,
    pub duplicate_notifies: u64,
    pub event_pushes: u64,
    pub commands_delivered: u64,
    pub commands_undelivered: u64,
    pub device_command_acks: u64,
    pub store_errors: u64,
    pub protocol_errors: u64,
}

pub struct Relay<S> {
    registry: Registry,
    template: NotificationTemplate,
    store: S,
    sessions: BTreeMap<ConnId, Session>,
    device_sessions: BTreeMap<String, ConnId>,
    next_conn: u64,
    stats: RelayStats,
}

impl<S: EventLog> Relay<S> {
    pub fn new(registry: Registry, store: S) -> Self {
        Self {
            registry,
            template: NotificationTemplate::default(),
            store,
            sessions: BTreeMap::new(),
            device_sessions: BTreeMap::new(),
            next_conn: 1,
            stats: RelayStats::default(),
        }
    }

    /// Replaces the notification template for all later fanouts.
    pub fn set_template(&mut self, template: NotificationTemplate) {
        self.template = template;
    }

    pub fn template(&self) -> &NotificationTemplate {
        &self.template
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn stats(&self) -> &RelayStats {
        &self.stats
    }

    pub fn is_device_online(&self, device_id: &str) -> bool {
        self.device_sessions.contains_key(device_id)
    }

    pub fn device_connection(&self, device_id: &str) -> Option<ConnId> {
        self.device_sessions.get(device_id).copied()
    }

    pub fn connection_count(&self) -> usize {
        self.sessions.len()
    }

    /// Registers a new transport connection.
    pub fn connect(&mut self) -> ConnId {
        let id = ConnId(self.next_conn);
        self.next_conn += 1;
        self.sessions.insert(id, Session::Fresh);
        id
    }

    /// Forgets a connection closed by the transport or by the relay.
    pub fn disconnect(&mut self, conn: ConnId) {
        if let Some(Session::Device { device_id }) = self.sessions.remove(&conn) {
            if self.device_sessions.get(&device_id) == Some(&conn) {
                self.device_sessions.remove(&device_id);
            }
        }
    }

    /// A line from `conn` failed to decode.
    pub fn handle_decode_error(&mut self, conn: ConnId, err: &DecodeError) -> Vec<Outbound> {
        let Some(session) = self.sessions.get(&conn) else { return Vec::new() };
        self.stats.protocol_errors += 1;
        let mut out = vec![Outbound::Send(conn, Message::error("decode", err.to_string()))];
        if *session == Session::Fresh {
            out.push(self.close(conn));
        }
        out
    }

    pub fn handle_frame(&mut self, conn: ConnId, now_ms: u64, msg: Message) -> Vec<Outbound> {
        let Some(session) = self.sessions.get(&conn).cloned() else {
            return Vec::new();
        };
        match (session, msg) {
            (Session::Fresh, Message::Login { role, auth, proto }) => {
                self.handle_login(conn, role, &auth, proto)
            }
            (Session::Fresh, other) => {
                self.stats.protocol_errors += 1;
                vec![
                    Outbound::Send(
                        conn,
                        Message::error("not_authenticated", format!("`{}` before login", other.type_name())),
                    ),
                    self.close(conn),
                ]
            }
            (_, Message::Login { .. }) => {
                self.stats.protocol_errors += 1;
                vec![
                    Outbound::Send(conn, Message::error("protocol", "second login on one connection")),
                    self.close(conn),
                ]
            }
            (_, Message::Heartbeat { .. }) => {
                vec![Outbound::Send(conn, Message::Heartbeat { ts_ms: now_ms })]
            }
            (Session::Device { device_id }, Message::Notify { seq, ts_ms, text }) => {
                self.handle_notify(conn, &device_id, now_ms, seq, ts_ms, text)
            }
            (Session::Device { .. }, Message::CommandAck { .. }) => {
                self.stats.device_command_acks += 1;
                Vec::new()
            }
            (Session::Operator { operator_id, .. }, Message::Subscribe { devices }) => {
                self.sessions.insert(conn, Session::Operator { operator_id, patterns: devices });
                Vec::new()
            }
            (Session::Operator { operator_id, .. }, Message::Command { device_id, pin, value, cmd_id }) => {
                self.handle_command(conn, &operator_id, now_ms, device_id, pin, value, cmd_id)
            }
            (Session::Operator { .. }, Message::HistoryRequest { device_id, from_ms, to_ms, limit }) => {
                self.handle_history(conn, device_id, from_ms, to_ms, limit)
            }
            (_, other) => {
                self.stats.protocol_errors += 1;
                vec![Outbound::Send(
                    conn,
                    Message::error("unexpected", format!("`{}` not accepted on this session", other.type_name())),
                )]
            }
        }
    }

    fn close(&mut self, conn: ConnId) -> Outbound {
        self.disconnect(conn);
        Outbound::Close(conn)
    }

    fn reject_login(&mut self, conn: ConnId, error: &str) -> Vec<Outbound> {
        self.stats.logins_rejected += 1;
        vec![
            Outbound::Send(
                conn,
                Message::LoginAck { ok: false, id: String::new(), error: Some(error.to_string()) },
            ),
            self.close(conn),
        ]
    }

    fn handle_login(&mut self, conn: ConnId, role: Role, auth: &str, proto: u32) -> Vec<Outbound> {
        if proto != PROTO_VERSION {
            return self.reject_login(conn, "bad_proto");
        }
        match role {
            Role::Device => {
                let Some(entry) = self.registry.device_by_token(auth) else {
                    return self.reject_login(conn, "bad_auth");
                };
                let device_id = entry.device_id.clone();
                let mut out = Vec::new();
                if let Some(old) = self.device_sessions.insert(device_id.clone(), conn) {
                    self.stats.sessions_evicted += 1;
                    out.push(Outbound::Send(
                        old,
                        Message::error("session_evicted", "device logged in on another connection"),
                    ));
                    self.sessions.remove(&old);
                    out.push(Outbound::Close(old));
                }
                self.sessions.insert(conn, Session::Device { device_id: device_id.clone() });
                self.stats.logins_accepted += 1;
                out.push(Outbound::Send(conn, Message::LoginAck { ok: true, id: device_id, error: None }));
                out
            }
            Role::Operator => {
                let Some(entry) = self.registry.operator_by_token(auth) else {
                    return self.reject_login(conn, "bad_auth");
                };
                let operator_id = entry.operator_id.clone();
                self.sessions.insert(
                    conn,
                    Session::Operator { operator_id: operator_id.clone(), patterns: Vec::new() },
                );
                self.stats.logins_accepted += 1;
                vec![Outbound::Send(conn, Message::LoginAck { ok: true, id: operator_id, error: None })]
            }
        }
    }

    fn handle_notify(
        &mut self,
        conn: ConnId,
        device_id: &str,
        now_ms: u64,
        seq: u64,
        device_ts_ms: u64,
        text: String,
    ) -> Vec<Outbound> {
        let candidate = NewEvent {
            device_id: device_id.to_string(),
            device_seq: seq,
            device_ts_ms,
            server_ts_ms: now_ms,
            text,
        };
        let stored_text = candidate.text.clone();
        let event_id = match self.store.append_event(candidate) {
            Err(_) => {
                self.stats.store_errors += 1;
                return Vec::new();
            }
            Ok(AppendOutcome::Duplicate) => {
                self.stats.duplicate_notifies += 1;
                return vec![Outbound::Send(conn, Message::NotifyAck { seq })];
            }
            Ok(AppendOutcome::Appended(id)) => id,
        };
        self.stats.events_stored += 1;

        let mut out = vec![Outbound::Send(conn, Message::NotifyAck { seq })];
        let rendered = self.template.render(device_id, &stored_text);
        for (&op_conn, session) in &self.sessions {
            if let Session::Operator { patterns, .. } = session {
                if patterns.iter().any(|p| pattern_matches(p, device_id)) {
                    out.push(Outbound::Send(
                        op_conn,
                        Message::Event(crate::protocol::Event {
                            event_id,
                            device_id: device_id.to_string(),
                            ts_ms: now_ms,
                            device_ts_ms,
                            text: rendered.clone(),
                        }),
                    ));
                    self.stats.event_pushes += 1;
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn handle_command(
        &mut self,
        conn: ConnId,
        operator_id: &str,
        now_ms: u64,
        device_id: String,
        pin: String,
        value: i64,
        operator_cmd_id: u64,
    ) -> Vec<Outbound> {
        if self.registry.device(&device_id).is_none() {
            return vec![Outbound::Send(
                conn,
                Message::error("no_such_device", format!("no device `{device_id}`")),
            )];
        }
        let target = self.device_sessions.get(&device_id).copied();
        let cmd_id = self.store.next_cmd_id();
        let audit = CommandAudit {
            cmd_id,
            operator_id: operator_id.to_string(),
            device_id,
            pin: pin.clone(),
            value,
            server_ts_ms: now_ms,
            delivered: target.is_some(),
        };
        if let Err(e) = self.store.append_audit(audit) {
            self.stats.store_errors += 1;
            return vec![Outbound::Send(conn, Message::error("store_error", e.to_string()))];
        }
        let mut out = Vec::new();
        if let Some(dev_conn) = target {
            self.stats.commands_delivered += 1;
            out.push(Outbound::Send(dev_conn, Message::HwWrite { pin, value, cmd_id }));
        } else {
            self.stats.commands_undelivered += 1;
        }
        out.push(Outbound::Send(
            conn,
            Message::CommandAck { cmd_id: operator_cmd_id, delivered: target.is_some() },
        ));
        out
    }

    fn handle_history(
        &mut self,
        conn: ConnId,
        device_id: Option<String>,
        from_ms: u64,
        to_ms: u64,
        limit: u64,
    ) -> Vec<Outbound> {
        if from_ms > to_ms || limit == 0 {
            return vec![Outbound::Send(
                conn,
                Message::error("bad_request", "history needs from_ms <= to_ms and limit >= 1"),
            )];
        }
        let q = Query {
            device_id,
            from_ms,
            to_ms,
            limit: usize::try_from(limit).unwrap_or(usize::MAX),
        };
        let events = self.store.query(&q).iter().map(|e| e.to_wire()).collect();
        vec![Outbound::Send(conn, Message::HistoryResponse { events })]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_rendering() {
        let t = NotificationTemplate::default();
        assert_eq!(t.render("gate-4", "==> Motion detected"), "==> Motion detected");
        let t = NotificationTemplate::new("Intruder at {device}: {text}");
        assert_eq!(t.render("gate-4", "==> Motion detected"), "Intruder at gate-4: ==> Motion detected");
        let t = NotificationTemplate::new("{x} {device");
        assert_eq!(t.render("d", "t"), "{x} {device");
        // substituted values are not re-expanded
        let t = NotificationTemplate::new("{text}/{device}");
        assert_eq!(t.render("{text}", "{device}"), "{device}/{text}");
    }

    #[test]
    fn patterns() {
        assert!(pattern_matches("*", "anything"));
        assert!(pattern_matches("gate-*", "gate-4"));
        assert!(!pattern_matches("gate-*", "tower-1"));
        assert!(pattern_matches("gate-4", "gate-4"));
        assert!(!pattern_matches("gate-4", "gate-40"));
    }

    #[test]
    fn registry_rejects_collisions() {
        let d = |t: &str, id: &str| DeviceEntry { token: t.into(), device_id: id.into(), display_name: String::new() };
        assert_eq!(
            Registry::new([d("a", "x"), d("a", "y")], []).unwrap_err(),
            RegistryError::DuplicateToken
        );
        assert_eq!(
            Registry::new([d("a", "x"), d("b", "x")], []).unwrap_err(),
            RegistryError::DuplicateDevice("x".into())
        );
        let o = OperatorEntry { token: "a".into(), operator_id: "op".into() };
        assert_eq!(Registry::new([d("a", "x")], [o]).unwrap_err(), RegistryError::DuplicateToken);
    }
}
