//! Deterministic discrete-time scenario harness.
//!
//! A [`Simulation`] owns N [`DeviceNode`]s, a set of operator sessions and an
//! in-process [`Relay`] backed by a [`MemoryLog`]. Each tick it samples every
//! sensor from the scripted intruder intervals, steps the node state
//! machines, and shuttles frames through fault-filtered in-memory channels
//! until no frame is in flight. Time is logical; a run depends only on the
//! script and the seed.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{CommandOutcome, DeviceNode, NodeConfig, NodeCounters, Phase};
use crate::protocol::{Message, Role, PROTO_VERSION};
use crate::relay::{ConnId, DeviceEntry, NotificationTemplate, OperatorEntry, Outbound, Registry, Relay, RelayStats};
use crate::sensor::{sample, IrSensorConfig};
use crate::store::{EventLog, MemoryLog, Query};

fn default_tick_ms() -> u64 {
    100
}

fn default_operators() -> Vec<OperatorSpec> {
    alloc::vec![OperatorSpec { id: String::from("op-1"), subscribe: default_subscription() }]
}

fn default_subscription() -> Vec<String> {
    alloc::vec![String::from("*")]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub duration_ms: u64,
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    pub nodes: Vec<NodeSpec>,
    #[serde(default = "default_operators")]
    pub operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub intruders: Vec<IntruderInterval>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub operator_actions: Vec<OperatorAction>,
    /// Notification template installed on the relay, `{text}` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    /// Registered token; `sim-token-<id>` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<String>,
    #[serde(default)]
    pub config: NodeConfig,
    #[serde(default)]
    pub sensor: IrSensorConfig,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            auth_token: None,
            placement: None,
            config: NodeConfig::default(),
            sensor: IrSensorConfig::default(),
        }
    }

    pub fn token(&self) -> String {
        self.auth_token.clone().unwrap_or_else(|| format!("sim-token-{}", self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub id: String,
    #[serde(default = "default_subscription")]
    pub subscribe: Vec<String>,
}

/// An obstacle in front of `node_id` during `[enter_ms, exit_ms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntruderInterval {
    pub node_id: String,
    pub enter_ms: u64,
    pub exit_ms: u64,
    pub distance_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// The node's link is down for the whole interval.
    DropLink,
    /// Each device-to-server frame is lost with probability `pct` / 100.
    DropUplinkPct,
}

/// Network fault on one node during `[from_ms, to_ms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub node_id: String,
    pub kind: FaultKind,
    pub from_ms: u64,
    pub to_ms: u64,
    #[serde(default)]
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorAction {
    pub at_ms: u64,
    /// Defaults to the first operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_id: Option<String>,
    pub command: ActionCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionCommand {
    pub device_id: String,
    pub pin: String,
    pub value: i64,
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serialization is infallible")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptViolation {
    pub location: String,
    pub problem: String,
}

impl core::fmt::Display for ScriptViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.location, self.problem)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario script ({} violation(s))", .0.len())]
pub struct ScriptError(pub Vec<ScriptViolation>);

/// Checks every script invariant and reports all offending entries.
pub fn validate(script: &ScenarioScript) -> Result<(), Vec<ScriptViolation>> {
    let mut v = Vec::new();
    let mut bad = |location: String, problem: &str| {
        v.push(ScriptViolation { location, problem: String::from(problem) })
    };

    if script.tick_ms == 0 {
        bad(String::from("tick_ms"), "must be positive");
    }
    if script.nodes.is_empty() {
        bad(String::from("nodes"), "at least one node is required");
    }
    let mut node_ids = BTreeSet::new();
    let mut tokens = BTreeSet::new();
    for (i, n) in script.nodes.iter().enumerate() {
        let loc = format!("nodes[{i}]");
        if !node_ids.insert(n.id.as_str()) {
            bad(loc.clone(), "duplicate node id");
        }
        if !tokens.insert(n.token()) {
            bad(loc.clone(), "duplicate auth token");
        }
        if let Err(e) = n.config.validate() {
            bad(format!("{loc}.config"), &format!("{e}"));
        }
        if let Err(e) = n.sensor.validate() {
            bad(format!("{loc}.sensor"), &format!("{e}"));
        }
    }
    if script.operators.is_empty() {
        bad(String::from("operators"), "at least one operator is required");
    }
    let mut op_ids = BTreeSet::new();
    for (i, o) in script.operators.iter().enumerate() {
        if !op_ids.insert(o.id.as_str()) {
            bad(format!("operators[{i}]"), "duplicate operator id");
        }
    }
    let within = |from: u64, to: u64| from <= to && to <= script.duration_ms;
    for (i, it) in script.intruders.iter().enumerate() {
        let loc = format!("intruders[{i}]");
        if !node_ids.contains(it.node_id.as_str()) {
            bad(loc.clone(), "unknown node_id");
        }
        if it.exit_ms < it.enter_ms {
            bad(loc.clone(), "exit_ms < enter_ms");
        } else if !within(it.enter_ms, it.exit_ms) {
            bad(loc.clone(), "interval exceeds duration_ms");
        }
        if it.distance_cm.is_nan() || it.distance_cm <= 0.0 {
            bad(loc, "distance_cm must be positive");
        }
    }
    for (i, f) in script.faults.iter().enumerate() {
        let loc = format!("faults[{i}]");
        if !node_ids.contains(f.node_id.as_str()) {
            bad(loc.clone(), "unknown node_id");
        }
        if f.to_ms < f.from_ms {
            bad(loc.clone(), "to_ms < from_ms");
        } else if !within(f.from_ms, f.to_ms) {
            bad(loc.clone(), "interval exceeds duration_ms");
        }
        if !(0.0..=100.0).contains(&f.pct) {
            bad(loc, "pct must be within [0, 100]");
        }
    }
    for (i, a) in script.operator_actions.iter().enumerate() {
        let loc = format!("operator_actions[{i}]");
        if a.at_ms > script.duration_ms {
            bad(loc.clone(), "at_ms exceeds duration_ms");
        }
        if let Some(op) = &a.operator_id {
            if !op_ids.contains(op.as_str()) {
                bad(loc, "unknown operator_id");
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub final_phase: Phase,
    pub alarm_on: bool,
    /// Ticks on which the sensor read below threshold.
    pub detection_ticks: u64,
    pub notifications_generated: u64,
    pub notifications_dropped: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub uplink_frames_dropped: u64,
    pub stored_events: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub operator_id: String,
    pub delivered: u64,
    pub duplicate_deliveries: u64,
    pub out_of_order_deliveries: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandReport {
    pub at_ms: u64,
    pub operator_id: String,
    pub device_id: String,
    pub pin: String,
    pub value: i64,
    /// `None` if no acknowledgement arrived before the end of the run.
    pub delivered: Option<bool>,
    pub ack_latency_ticks: Option<u64>,
    /// Ticks until the device applied the write, if it did.
    pub applied_latency_ticks: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub duration_ms: u64,
    pub tick_ms: u64,
    pub ticks: u64,
    pub nodes: Vec<NodeReport>,
    pub stored_events: u64,
    pub operators: Vec<OperatorReport>,
    /// Device tick that raised a notification to operator delivery.
    pub notification_latency_ticks: Vec<u64>,
    pub commands: Vec<CommandReport>,
    pub uplink_frames_dropped: u64,
    pub link_frames_dropped: u64,
    pub relay: RelayStats,
}

impl SimulationReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn total_delivered(&self) -> u64 {
        self.operators.iter().map(|o| o.delivered).sum()
    }
}

struct SimNode {
    id: String,
    node: DeviceNode,
    sensor: IrSensorConfig,
    sensor_rng: ChaCha8Rng,
    conn: Option<ConnId>,
    detection_ticks: u64,
    uplink_dropped: u64,
}

struct SimOperator {
    id: String,
    conn: ConnId,
    seen: BTreeSet<u64>,
    last_event_id: u64,
    delivered: u64,
    duplicates: u64,
    out_of_order: u64,
}

enum Hop {
    Uplink { node: usize, msg: Message },
    Operator { op: usize, msg: Message },
    Downlink(Outbound),
}

pub struct Simulation {
    script: ScenarioScript,
    seed: u64,
    relay: Relay<MemoryLog>,
    nodes: Vec<SimNode>,
    operators: Vec<SimOperator>,
    fault_rng: ChaCha8Rng,
    tick_index: u64,
    next_action: usize,
    actions: Vec<OperatorAction>,
    commands: Vec<CommandReport>,
    /// operator conn + operator cmd_id -> command report index
    pending_acks: BTreeMap<(ConnId, u64), usize>,
    /// relay cmd_id -> command report index
    hw_writes: BTreeMap<u64, usize>,
    latencies: Vec<u64>,
    link_dropped: u64,
    next_op_cmd_id: u64,
}

impl Simulation {
    pub fn new(script: ScenarioScript, seed: u64) -> Result<Self, ScriptError> {
        validate(&script).map_err(ScriptError)?;

        let devices = script.nodes.iter().map(|n| DeviceEntry {
            token: n.token(),
            device_id: n.id.clone(),
            display_name: n.placement.clone().unwrap_or_default(),
        });
        let operators = script.operators.iter().map(|o| OperatorEntry {
            token: format!("sim-op-token-{}", o.id),
            operator_id: o.id.clone(),
        });
        let registry = Registry::new(devices, operators).map_err(|e| {
            ScriptError(alloc::vec![ScriptViolation {
                location: String::from("registry"),
                problem: format!("{e}"),
            }])
        })?;
        let mut relay = Relay::new(registry, MemoryLog::new());
        if let Some(t) = &script.template {
            relay.set_template(NotificationTemplate::new(t.clone()));
        }

        let mut nodes = Vec::with_capacity(script.nodes.len());
        for (i, spec) in script.nodes.iter().enumerate() {
            let mut cfg = spec.config.clone();
            cfg.auth_token = spec.token();
            let node = DeviceNode::new(cfg, spec.sensor.clone())
                .expect("node config was validated");
            let mut sensor_rng = ChaCha8Rng::seed_from_u64(seed);
            sensor_rng.set_stream(i as u64 + 1);
            nodes.push(SimNode {
                id: spec.id.clone(),
                node,
                sensor: spec.sensor.clone(),
                sensor_rng,
                conn: None,
                detection_ticks: 0,
                uplink_dropped: 0,
            });
        }

        let mut actions = script.operator_actions.clone();
        actions.sort_by_key(|a| a.at_ms);

        let mut sim = Simulation {
            seed,
            relay,
            nodes,
            operators: Vec::new(),
            fault_rng: ChaCha8Rng::seed_from_u64(seed),
            tick_index: 0,
            next_action: 0,
            actions,
            commands: Vec::new(),
            pending_acks: BTreeMap::new(),
            hw_writes: BTreeMap::new(),
            latencies: Vec::new(),
            link_dropped: 0,
            next_op_cmd_id: 1,
            script,
        };
        sim.connect_operators();
        Ok(sim)
    }

    fn connect_operators(&mut self) {
        let specs = self.script.operators.clone();
        for (i, spec) in specs.iter().enumerate() {
            let conn = self.relay.connect();
            self.operators.push(SimOperator {
                id: spec.id.clone(),
                conn,
                seen: BTreeSet::new(),
                last_event_id: 0,
                delivered: 0,
                duplicates: 0,
                out_of_order: 0,
            });
            let mut queue = VecDeque::new();
            queue.push_back(Hop::Operator {
                op: i,
                msg: Message::Login {
                    role: Role::Operator,
                    auth: format!("sim-op-token-{}", spec.id),
                    proto: PROTO_VERSION,
                },
            });
            queue.push_back(Hop::Operator { op: i, msg: Message::Subscribe { devices: spec.subscribe.clone() } });
            self.pump(0, queue);
        }
    }

    pub fn now(&self) -> u64 {
        self.tick_index * self.script.tick_ms
    }

    pub fn is_finished(&self) -> bool {
        self.now() >= self.script.duration_ms
    }

    pub fn relay(&self) -> &Relay<MemoryLog> {
        &self.relay
    }

    pub fn node(&self, node_id: &str) -> Option<&DeviceNode> {
        self.nodes.iter().find(|n| n.id == node_id).map(|n| &n.node)
    }

    fn fault_active(&self, node_id: &str, kind: FaultKind, now: u64) -> Option<f64> {
        self.script
            .faults
            .iter()
            .filter(|f| f.node_id == node_id && f.kind == kind && f.from_ms <= now && now < f.to_ms)
            .map(|f| f.pct)
            .reduce(f64::max)
    }

    fn intruder_distance(&self, node_id: &str, now: u64) -> Option<f64> {
        self.script
            .intruders
            .iter()
            .filter(|i| i.node_id == node_id && i.enter_ms <= now && now < i.exit_ms)
            .map(|i| i.distance_cm)
            .reduce(f64::min)
    }

    /// Advances one tick. Returns `false` once the run is over.
    pub fn step(&mut self) -> bool {
        if self.is_finished() {
            return false;
        }
        let now = self.now();
        let mut queue = VecDeque::new();

        for i in 0..self.nodes.len() {
            let id = self.nodes[i].id.clone();
            let link_up = self.fault_active(&id, FaultKind::DropLink, now).is_none();
            if !link_up {
                self.drop_node_conn(i);
            }
            let frames = self.nodes[i].node.advance_connection(now, link_up, None);
            self.sync_node_conn(i, &frames);
            queue.extend(frames.into_iter().map(|msg| Hop::Uplink { node: i, msg }));

            let distance = self.intruder_distance(&id, now);
            let n = &mut self.nodes[i];
            let reading = sample(&n.sensor, distance, &mut n.sensor_rng).expect("distance was validated");
            if crate::sensor::is_detection(reading, &n.sensor) {
                n.detection_ticks += 1;
            }
            let frames = n.node.tick(now, reading);
            queue.extend(frames.into_iter().map(|msg| Hop::Uplink { node: i, msg }));
        }

        while let Some(action) = self.actions.get(self.next_action) {
            if action.at_ms > now {
                break;
            }
            let action = action.clone();
            self.next_action += 1;
            let op = action
                .operator_id
                .as_ref()
                .and_then(|id| self.operators.iter().position(|o| &o.id == id))
                .unwrap_or(0);
            let cmd_id = self.next_op_cmd_id;
            self.next_op_cmd_id += 1;
            let report_idx = self.commands.len();
            self.commands.push(CommandReport {
                at_ms: now,
                operator_id: self.operators[op].id.clone(),
                device_id: action.command.device_id.clone(),
                pin: action.command.pin.clone(),
                value: action.command.value,
                delivered: None,
                ack_latency_ticks: None,
                applied_latency_ticks: None,
                error: None,
            });
            self.pending_acks.insert((self.operators[op].conn, cmd_id), report_idx);
            queue.push_back(Hop::Operator {
                op,
                msg: Message::Command {
                    device_id: action.command.device_id,
                    pin: action.command.pin,
                    value: action.command.value,
                    cmd_id,
                },
            });
        }

        self.pump(now, queue);
        self.tick_index += 1;
        true
    }

    /// Runs to the end of the script.
    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    fn drop_node_conn(&mut self, i: usize) {
        if let Some(conn) = self.nodes[i].conn.take() {
            self.relay.disconnect(conn);
        }
    }

    /// Opens a fresh relay connection when the node starts a login, and drops
    /// it whenever the node has given up on its session.
    fn sync_node_conn(&mut self, i: usize, frames: &[Message]) {
        if frames.iter().any(|m| matches!(m, Message::Login { .. })) {
            self.drop_node_conn(i);
            self.nodes[i].conn = Some(self.relay.connect());
        } else if matches!(
            self.nodes[i].node.phase(),
            Phase::Backoff | Phase::LinkConnecting | Phase::AuthFailed
        ) {
            self.drop_node_conn(i);
        }
    }

    fn pump(&mut self, now: u64, mut queue: VecDeque<Hop>) {
        let tick_ms = self.script.tick_ms;
        while let Some(hop) = queue.pop_front() {
            match hop {
                Hop::Uplink { node, msg } => {
                    let Some(conn) = self.nodes[node].conn else {
                        self.link_dropped += 1;
                        continue;
                    };
                    let id = self.nodes[node].id.clone();
                    if let Some(pct) = self.fault_active(&id, FaultKind::DropUplinkPct, now) {
                        if self.fault_rng.gen_bool(pct / 100.0) {
                            self.nodes[node].uplink_dropped += 1;
                            continue;
                        }
                    }
                    let out = self.relay.handle_frame(conn, now, msg);
                    queue.extend(out.into_iter().map(Hop::Downlink));
                }
                Hop::Operator { op, msg } => {
                    let conn = self.operators[op].conn;
                    let report_idx = match &msg {
                        Message::Command { cmd_id, .. } => self.pending_acks.get(&(conn, *cmd_id)).copied(),
                        _ => None,
                    };
                    let out = self.relay.handle_frame(conn, now, msg);
                    if let Some(idx) = report_idx {
                        for o in &out {
                            if let Outbound::Send(_, Message::HwWrite { cmd_id, .. }) = o {
                                self.hw_writes.insert(*cmd_id, idx);
                            }
                        }
                    }
                    queue.extend(out.into_iter().map(Hop::Downlink));
                }
                Hop::Downlink(Outbound::Close(conn)) => {
                    if let Some(i) = self.nodes.iter().position(|n| n.conn == Some(conn)) {
                        self.nodes[i].conn = None;
                        let frames = self.nodes[i].node.advance_connection(now, false, None);
                        queue.extend(frames.into_iter().map(|msg| Hop::Uplink { node: i, msg }));
                    }
                }
                Hop::Downlink(Outbound::Send(conn, msg)) => {
                    if let Some(i) = self.nodes.iter().position(|n| n.conn == Some(conn)) {
                        let frames = self.nodes[i].node.handle_message(now, &msg);
                        if let Message::HwWrite { cmd_id, .. } = &msg {
                            let applied = self.nodes[i].node.last_command() == Some((*cmd_id, CommandOutcome::Applied));
                            if let (true, Some(&idx)) = (applied, self.hw_writes.get(cmd_id)) {
                                let at = self.commands[idx].at_ms;
                                self.commands[idx].applied_latency_ticks = Some((now - at) / tick_ms);
                            }
                        }
                        self.sync_node_conn(i, &frames);
                        queue.extend(frames.into_iter().map(|m| Hop::Uplink { node: i, msg: m }));
                    } else if let Some(op) = self.operators.iter().position(|o| o.conn == conn) {
                        self.deliver_to_operator(op, now, msg);
                    }
                }
            }
        }
    }

    fn deliver_to_operator(&mut self, op: usize, now: u64, msg: Message) {
        let tick_ms = self.script.tick_ms;
        let conn = self.operators[op].conn;
        match msg {
            Message::Event(ev) => {
                let o = &mut self.operators[op];
                if !o.seen.insert(ev.event_id) {
                    o.duplicates += 1;
                    return;
                }
                if ev.event_id < o.last_event_id {
                    o.out_of_order += 1;
                }
                o.last_event_id = o.last_event_id.max(ev.event_id);
                o.delivered += 1;
                self.latencies.push(now.saturating_sub(ev.device_ts_ms) / tick_ms);
            }
            Message::CommandAck { cmd_id, delivered } => {
                if let Some(idx) = self.pending_acks.remove(&(conn, cmd_id)) {
                    let c = &mut self.commands[idx];
                    c.delivered = Some(delivered);
                    c.ack_latency_ticks = Some((now - c.at_ms) / tick_ms);
                }
            }
            Message::Error { code, .. } => {
                // Errors answer the most recent command from this operator.
                let last = self
                    .pending_acks
                    .iter()
                    .filter(|((c, _), _)| *c == conn)
                    .map(|(k, &idx)| (*k, idx))
                    .next_back();
                if let Some((key, idx)) = last {
                    self.pending_acks.remove(&key);
                    self.commands[idx].error = Some(code);
                }
            }
            _ => {}
        }
    }

    pub fn report(&self) -> SimulationReport {
        let store = self.relay.store();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let c: &NodeCounters = n.node.counters();
            let q = Query { device_id: Some(n.id.clone()), ..Query::all() };
            nodes.push(NodeReport {
                node_id: n.id.clone(),
                final_phase: n.node.phase(),
                alarm_on: n.node.alarm_on(),
                detection_ticks: n.detection_ticks,
                notifications_generated: c.notifies_generated,
                notifications_dropped: c.dropped_overflow + c.dropped_retries,
                transmissions: c.transmissions,
                retransmissions: c.retransmissions,
                uplink_frames_dropped: n.uplink_dropped,
                stored_events: store.query(&q).len() as u64,
            });
        }
        SimulationReport {
            seed: self.seed,
            duration_ms: self.script.duration_ms,
            tick_ms: self.script.tick_ms,
            ticks: self.tick_index,
            nodes,
            stored_events: store.index().len() as u64,
            operators: self
                .operators
                .iter()
                .map(|o| OperatorReport {
                    operator_id: o.id.clone(),
                    delivered: o.delivered,
                    duplicate_deliveries: o.duplicates,
                    out_of_order_deliveries: o.out_of_order,
                })
                .collect(),
            notification_latency_ticks: self.latencies.clone(),
            commands: self.commands.clone(),
            uplink_frames_dropped: self.nodes.iter().map(|n| n.uplink_dropped).sum(),
            link_frames_dropped: self.link_dropped,
            relay: *self.relay.stats(),
        }
    }
}

/// Validates and runs `script` to completion.
pub fn run(script: &ScenarioScript, seed: u64) -> Result<SimulationReport, ScriptError> {
    let mut sim = Simulation::new(script.clone(), seed)?;
    sim.run_to_end();
    Ok(sim.report())
}
