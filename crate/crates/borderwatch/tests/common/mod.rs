#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use borderwatch::config::ServerConfig;
use borderwatch::{Client, Server};
use borderwatch_core::protocol::{Message, Role};
use borderwatch_core::relay::{DeviceEntry, OperatorEntry};

pub const TIMEOUT: Duration = Duration::from_secs(5);
pub const DEVICE_TOKEN: &str = "374524ebf2ca430bacfd47e29e4156d";

pub fn config(store: &Path, operators: usize) -> ServerConfig {
    let mut cfg: ServerConfig = serde_json::from_str("{}").unwrap();
    cfg.bind = "127.0.0.1".into();
    cfg.port = 0;
    cfg.ws_port = Some(0);
    cfg.store_path = store.to_path_buf();
    cfg.devices = vec![DeviceEntry {
        token: DEVICE_TOKEN.into(),
        device_id: "gate-4".into(),
        display_name: "Gate 4".into(),
    }];
    cfg.operators = (1..=operators)
        .map(|i| OperatorEntry { token: format!("op-token-{i}"), operator_id: format!("soldier-{i}") })
        .collect();
    cfg
}

pub fn start(store: &Path, operators: usize) -> Server {
    Server::start(&config(store, operators)).unwrap().0
}

pub fn device(server: &Server) -> Client {
    let mut c = Client::connect(server.local_addr()).unwrap();
    assert_eq!(c.login(Role::Device, DEVICE_TOKEN, TIMEOUT).unwrap(), "gate-4");
    c
}

/// Logs in operator `i` subscribed to every device. The history round trip
/// guarantees the subscription is in place before this returns.
pub fn operator(server: &Server, i: usize) -> Client {
    let mut c = Client::connect(server.local_addr()).unwrap();
    c.login(Role::Operator, &format!("op-token-{i}"), TIMEOUT).unwrap();
    c.send(&Message::Subscribe { devices: vec!["*".into()] }).unwrap();
    sync(&mut c);
    c
}

pub fn sync(c: &mut Client) {
    c.send(&Message::HistoryRequest { device_id: Some("none".into()), from_ms: 0, to_ms: 0, limit: 1 }).unwrap();
    c.recv_matching(TIMEOUT, |m| matches!(m, Message::HistoryResponse { .. }).then_some(())).unwrap();
}

pub fn notify(c: &mut Client, seq: u64, text: &str) {
    c.send(&Message::Notify { seq, ts_ms: seq * 100, text: text.into() }).unwrap();
    let acked = c.recv_matching(TIMEOUT, |m| match m {
        Message::NotifyAck { seq } => Some(*seq),
        _ => None,
    });
    assert_eq!(acked.unwrap(), seq);
}
