//! Server configuration file (JSON).
//!
//! ```json
//! {
//!   "bind": "0.0.0.0",
//!   "port": 7878,
//!   "ws_port": 7879,
//!   "store_path": "events.log",
//!   "flush": "every_append",
//!   "template": "Intruder at {device}: {text}",
//!   "devices": [
//!     {"token": "374524ebf2ca430bacfd47e29e4156d", "device_id": "gate-4", "display_name": "Gate 4"}
//!   ],
//!   "operators": [{"token": "op-secret", "operator_id": "soldier-1"}]
//! }
//! ```

use std::path::{Path, PathBuf};

use borderwatch_core::relay::{DeviceEntry, OperatorEntry, Registry, RegistryError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::file_store::FlushPolicy;

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// WebSocket endpoint for browser consoles; disabled when absent.
    #[serde(default)]
    pub ws_port: Option<u16>,
    #[serde(default = "default_store_path")]
    pub store_path: PathBuf,
    #[serde(default)]
    pub flush: FlushPolicy,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub devices: Vec<DeviceEntry>,
    #[serde(default)]
    pub operators: Vec<OperatorEntry>,
}

fn default_bind() -> String {
    String::from("0.0.0.0")
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

fn default_store_path() -> PathBuf {
    PathBuf::from("events.log")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid registry in config: {0}")]
    Registry(#[from] RegistryError),
}

impl ServerConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let cfg: ServerConfig = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.registry()?;
        Ok(cfg)
    }

    pub fn registry(&self) -> Result<Registry, RegistryError> {
        Registry::new(self.devices.iter().cloned(), self.operators.iter().cloned())
    }
}
