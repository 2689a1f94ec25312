//! Pure logic for the borderwatch intrusion pipeline.
//!
//! Simulated IR sensor nodes detect crossings and report them to a relay
//! server, which stores each intrusion once, pushes it to subscribed
//! operators and routes their alarm commands back to the nodes. This crate
//! holds everything that does not touch the operating system:
//!
//! - [`sensor`]: distance to analog reading, and the detection threshold
//! - [`node`]: node firmware state machine
//! - [`protocol`]: NDJSON wire frames
//! - [`store`]: event records, the queryable index, log line format
//! - [`relay`]: transport-independent relay server
//! - [`sim`]: deterministic scenario simulator
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod node;
pub mod protocol;
pub mod relay;
pub mod sensor;
pub mod sim;
pub mod store;

pub use node::{DeviceNode, NodeConfig, Phase, PinCommand};
pub use protocol::{decode, encode, DecodeError, Event, Message, Role};
pub use relay::{ConnId, NotificationTemplate, Outbound, Registry, Relay};
pub use sensor::{is_detection, sample, AnalogReading, IrSensorConfig};
pub use sim::{ScenarioScript, SimulationReport};
pub use store::{AppendOutcome, CommandAudit, EventIndex, EventLog, IntrusionEvent, MemoryLog, NewEvent, Query};
