//! Simulated sensor-node firmware.
//!
//! A [`DeviceNode`] is driven by two calls from its host: [`DeviceNode::advance_connection`]
//! steps the Wi-Fi/cloud handshake and [`DeviceNode::tick`] runs one pass of
//! the sensing loop. Frames from the server go through
//! [`DeviceNode::handle_message`]. All three return the frames to send upstream.
//!
//! Notifications are edge-triggered: one per clear-to-blocked transition,
//! subject to a cooldown, re-armed once the path has been clear for
//! `rearm_hold_ms`. Unacknowledged notifications stay queued and are
//! retransmitted until acked, so the server sees them at least once.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Message, Role, PROTO_VERSION};
use crate::sensor::{is_detection, AnalogReading, IrSensorConfig};

pub const DEFAULT_NOTIFY_TEXT: &str = "==> Motion detected";

/// Virtual pin the operator writes to switch the alarm.
pub const VIRTUAL_ALARM_PIN: &str = "V1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub auth_token: String,
    pub alarm_pin: String,
    pub sensor_pin: String,
    pub sample_period_ms: u64,
    pub notify_cooldown_ms: u64,
    pub rearm_hold_ms: u64,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub offline_queue_cap: usize,
    /// Give up on a login that has not been answered after this long.
    pub login_timeout_ms: u64,
    /// Resend an unacknowledged notification after this long.
    pub retransmit_after_ms: u64,
    /// Transmissions per notification before it is discarded.
    pub max_send_attempts: u32,
    pub notify_text: String,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            auth_token: String::from("374524ebf2ca430bacfd47e29e4156d"),
            alarm_pin: String::from("D7"),
            sensor_pin: String::from("A0"),
            sample_period_ms: 100,
            notify_cooldown_ms: 5000,
            rearm_hold_ms: 1000,
            backoff_base_ms: 500,
            backoff_cap_ms: 8000,
            offline_queue_cap: 1024,
            login_timeout_ms: 2000,
            retransmit_after_ms: 500,
            max_send_attempts: 10,
            notify_text: String::from(DEFAULT_NOTIFY_TEXT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeConfigError {
    #[error("sample_period_ms must be positive")]
    ZeroSamplePeriod,
    #[error("backoff_base_ms must not exceed backoff_cap_ms")]
    BackoffOrder,
    #[error("offline_queue_cap must be positive")]
    ZeroQueueCap,
    #[error("max_send_attempts must be positive")]
    ZeroAttempts,
    #[error("malformed pin name `{0}`")]
    BadPin(String),
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), NodeConfigError> {
        if self.sample_period_ms == 0 {
            return Err(NodeConfigError::ZeroSamplePeriod);
        }
        if self.backoff_base_ms > self.backoff_cap_ms {
            return Err(NodeConfigError::BackoffOrder);
        }
        if self.offline_queue_cap == 0 {
            return Err(NodeConfigError::ZeroQueueCap);
        }
        if self.max_send_attempts == 0 {
            return Err(NodeConfigError::ZeroAttempts);
        }
        for pin in [&self.alarm_pin, &self.sensor_pin] {
            if !is_valid_pin(pin) {
                return Err(NodeConfigError::BadPin(pin.clone()));
            }
        }
        Ok(())
    }
}

/// `A`, `D` or `V` followed by one to three decimal digits.
pub fn is_valid_pin(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(bank) = chars.next() else { return false };
    let digits = chars.as_str();
    matches!(bank, 'A' | 'D' | 'V')
        && (1..=3).contains(&digits.len())
        && digits.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Boot,
    LinkConnecting,
    CloudLogin,
    Online,
    Backoff,
    /// Terminal: the server rejected the auth token.
    AuthFailed,
}

/// Actuator write routed from an operator through the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinCommand {
    pub pin: String,
    pub value: i64,
    pub cmd_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandOutcome {
    Applied,
    /// Well-formed pin that this node does not drive.
    Ignored,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    MalformedPin,
    NotOnline,
}

impl CommandOutcome {
    pub fn delivered(self) -> bool {
        !matches!(self, CommandOutcome::Rejected(_))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub detections: u64,
    pub notifies_generated: u64,
    pub notifies_acked: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub dropped_overflow: u64,
    pub dropped_retries: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingNotify {
    seq: u64,
    ts_ms: u64,
    text: String,
    last_sent: Option<u64>,
    attempts: u32,
}

impl PendingNotify {
    fn frame(&self) -> Message {
        Message::Notify { seq: self.seq, ts_ms: self.ts_ms, text: self.text.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct DeviceNode {
    cfg: NodeConfig,
    sensor: IrSensorConfig,
    phase: Phase,
    alarm_on: bool,
    led_on: bool,
    armed: bool,
    next_seq: u64,
    pending: VecDeque<PendingNotify>,
    backoff_deadline: u64,
    backoff_attempts: u32,
    login_started: u64,
    clear_since: Option<u64>,
    last_notify_at: Option<u64>,
    last_command: Option<(u64, CommandOutcome)>,
    counters: NodeCounters,
}

impl DeviceNode {
    pub fn new(cfg: NodeConfig, sensor: IrSensorConfig) -> Result<Self, NodeConfigError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            sensor,
            phase: Phase::Boot,
            alarm_on: false,
            led_on: false,
            armed: true,
            next_seq: 1,
            pending: VecDeque::new(),
            backoff_deadline: 0,
            backoff_attempts: 0,
            login_started: 0,
            clear_since: None,
            last_notify_at: None,
            last_command: None,
            counters: NodeCounters::default(),
        })
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Commanded alarm (buzzer and lights).
    pub fn alarm_on(&self) -> bool {
        self.alarm_on
    }

    /// Local LED, lit while the sensor is blocked.
    pub fn led_on(&self) -> bool {
        self.led_on
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn backoff_deadline(&self) -> Option<u64> {
        (self.phase == Phase::Backoff).then_some(self.backoff_deadline)
    }

    pub fn last_command(&self) -> Option<(u64, CommandOutcome)> {
        self.last_command
    }

    pub fn counters(&self) -> &NodeCounters {
        &self.counters
    }

    /// One pass of the sensing loop at time `now`.
    pub fn tick(&mut self, now: u64, reading: AnalogReading) -> Vec<Message> {
        if self.phase == Phase::AuthFailed {
            return Vec::new();
        }
        let detecting = is_detection(reading, &self.sensor);
        self.led_on = detecting;

        if let Some(since) = self.clear_since {
            if !self.armed && now.saturating_sub(since) >= self.cfg.rearm_hold_ms {
                self.armed = true;
            }
        }

        if detecting {
            self.counters.detections += 1;
            self.clear_since = None;
            let cooled = self
                .last_notify_at
                .is_none_or(|t| now.saturating_sub(t) >= self.cfg.notify_cooldown_ms);
            if self.armed && cooled {
                self.enqueue_notify(now);
            }
        } else if self.clear_since.is_none() {
            self.clear_since = Some(now);
        }

        if self.phase == Phase::Online {
            self.transmit_due(now)
        } else {
            Vec::new()
        }
    }

    fn enqueue_notify(&mut self, now: u64) {
        if self.pending.len() >= self.cfg.offline_queue_cap {
            self.pending.pop_front();
            self.counters.dropped_overflow += 1;
        }
        self.pending.push_back(PendingNotify {
            seq: self.next_seq,
            ts_ms: now,
            text: self.cfg.notify_text.clone(),
            last_sent: None,
            attempts: 0,
        });
        self.next_seq += 1;
        self.armed = false;
        self.last_notify_at = Some(now);
        self.counters.notifies_generated += 1;
    }

    /// Sends never-sent notifications and retransmits stale ones, in seq order.
    fn transmit_due(&mut self, now: u64) -> Vec<Message> {
        let mut out = Vec::new();
        let retransmit_after = self.cfg.retransmit_after_ms;
        let max_attempts = self.cfg.max_send_attempts;
        let before = self.pending.len();
        self.pending.retain(|p| match p.last_sent {
            Some(t) => !(now.saturating_sub(t) >= retransmit_after && p.attempts >= max_attempts),
            None => true,
        });
        self.counters.dropped_retries += (before - self.pending.len()) as u64;

        for p in self.pending.iter_mut() {
            let due = match p.last_sent {
                None => true,
                Some(t) => now.saturating_sub(t) >= retransmit_after,
            };
            if due {
                if p.last_sent.is_some() {
                    self.counters.retransmissions += 1;
                }
                p.last_sent = Some(now);
                p.attempts += 1;
                self.counters.transmissions += 1;
                out.push(p.frame());
            }
        }
        out
    }

    /// Sends everything still queued, in seq order, after (re)entering Online.
    fn flush(&mut self, now: u64) -> Vec<Message> {
        let mut out = Vec::with_capacity(self.pending.len());
        for p in self.pending.iter_mut() {
            if p.last_sent.is_some() {
                self.counters.retransmissions += 1;
            }
            p.last_sent = Some(now);
            p.attempts += 1;
            self.counters.transmissions += 1;
            out.push(p.frame());
        }
        out
    }

    fn enter_backoff(&mut self, now: u64) {
        let shift = self.backoff_attempts.min(32);
        let delay = self
            .cfg
            .backoff_base_ms
            .checked_shl(shift)
            .filter(|d| d >> shift == self.cfg.backoff_base_ms)
            .unwrap_or(u64::MAX)
            .min(self.cfg.backoff_cap_ms);
        self.backoff_attempts = self.backoff_attempts.saturating_add(1);
        self.backoff_deadline = now.saturating_add(delay);
        self.phase = Phase::Backoff;
    }

    /// Steps the connection state machine. `login_ack` is the `ok` flag of a
    /// LoginAck received since the last call, if any.
    pub fn advance_connection(
        &mut self,
        now: u64,
        link_up: bool,
        login_ack: Option<bool>,
    ) -> Vec<Message> {
        let mut out = Vec::new();
        loop {
            match self.phase {
                Phase::AuthFailed => break,
                Phase::Boot => {
                    self.phase = Phase::LinkConnecting;
                }
                Phase::LinkConnecting => {
                    if link_up {
                        self.phase = Phase::CloudLogin;
                        self.login_started = now;
                        out.push(Message::Login {
                            role: Role::Device,
                            auth: self.cfg.auth_token.clone(),
                            proto: PROTO_VERSION,
                        });
                    }
                    break;
                }
                Phase::CloudLogin => {
                    if !link_up {
                        self.enter_backoff(now);
                    } else {
                        match login_ack {
                            Some(true) => {
                                self.phase = Phase::Online;
                                self.backoff_attempts = 0;
                                out.extend(self.flush(now));
                            }
                            Some(false) => {
                                self.phase = Phase::AuthFailed;
                                self.pending.clear();
                            }
                            None => {
                                if now.saturating_sub(self.login_started) >= self.cfg.login_timeout_ms {
                                    self.enter_backoff(now);
                                }
                            }
                        }
                    }
                    break;
                }
                Phase::Online => {
                    if !link_up {
                        self.enter_backoff(now);
                    }
                    break;
                }
                Phase::Backoff => {
                    if now >= self.backoff_deadline {
                        self.phase = Phase::LinkConnecting;
                    } else {
                        break;
                    }
                }
            }
        }
        out
    }

    /// Reacts to one frame from the server.
    pub fn handle_message(&mut self, now: u64, msg: &Message) -> Vec<Message> {
        match msg {
            Message::LoginAck { ok, .. } => self.advance_connection(now, true, Some(*ok)),
            Message::NotifyAck { seq } => {
                let before = self.pending.len();
                self.pending.retain(|p| p.seq != *seq);
                self.counters.notifies_acked += (before - self.pending.len()) as u64;
                Vec::new()
            }
            Message::HwWrite { pin, value, cmd_id } => {
                let outcome =
                    self.apply_command(&PinCommand { pin: pin.clone(), value: *value, cmd_id: *cmd_id });
                alloc::vec![Message::CommandAck { cmd_id: *cmd_id, delivered: outcome.delivered() }]
            }
            _ => Vec::new(),
        }
    }

    /// Applies an actuator write. Only the virtual alarm pin and the
    /// configured physical alarm pin have an effect.
    pub fn apply_command(&mut self, cmd: &PinCommand) -> CommandOutcome {
        let outcome = if self.phase != Phase::Online {
            CommandOutcome::Rejected(RejectReason::NotOnline)
        } else if !is_valid_pin(&cmd.pin) {
            CommandOutcome::Rejected(RejectReason::MalformedPin)
        } else if cmd.pin == VIRTUAL_ALARM_PIN || cmd.pin == self.cfg.alarm_pin {
            self.alarm_on = cmd.value != 0;
            CommandOutcome::Applied
        } else {
            CommandOutcome::Ignored
        };
        self.last_command = Some((cmd.cmd_id, outcome));
        outcome
    }
}
