//! Host side of borderwatch: the durable event log, the live relay server,
//! a wall-clock device runner, the history client and the CLI plumbing.

pub mod client;
pub mod config;
pub mod file_store;
pub mod history;
pub mod node_runner;
pub mod server;

pub use client::{Client, ClientError};
pub use config::ServerConfig;
pub use file_store::{FileLog, FlushPolicy, RecoveryReport, StoreError, TornRecord};
pub use server::Server;
