//! Live relay server: NDJSON over TCP, and the same frames over WebSocket
//! text messages for browser consoles.
//!
//! Every connection gets a reader and a writer. Readers decode frames and
//! hand them to the shared [`Relay`] under one lock; the resulting sends are
//! queued to the writers' channels while the lock is still held, so each
//! operator sees events in the order they were stored.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use borderwatch_core::protocol::{decode, encode, encode_line, LineFramer, Message};
use borderwatch_core::relay::{ConnId, NotificationTemplate, Outbound, Relay, RegistryError};
use log::{debug, info, warn};
use thiserror::Error;

use crate::config::ServerConfig;
use crate::file_store::{FileLog, RecoveryReport, StoreError};

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

enum Outgoing {
    Frame(Message),
    Close,
}

struct Hub {
    relay: Relay<FileLog>,
    peers: HashMap<ConnId, Sender<Outgoing>>,
}

impl Hub {
    fn register(&mut self) -> (ConnId, Receiver<Outgoing>) {
        let conn = self.relay.connect();
        let (tx, rx) = mpsc::channel();
        self.peers.insert(conn, tx);
        (conn, rx)
    }

    fn inbound(&mut self, conn: ConnId, line: &[u8]) {
        let out = match decode(line) {
            Ok(msg) => {
                debug!("{conn:?} <- {}", msg.type_name());
                self.relay.handle_frame(conn, now_ms(), msg)
            }
            Err(e) => {
                debug!("{conn:?} sent an undecodable frame: {e}");
                self.relay.handle_decode_error(conn, &e)
            }
        };
        self.dispatch(out);
    }

    fn dispatch(&mut self, out: Vec<Outbound>) {
        for o in out {
            match o {
                Outbound::Send(conn, msg) => {
                    if let Some(tx) = self.peers.get(&conn) {
                        let _ = tx.send(Outgoing::Frame(msg));
                    }
                }
                Outbound::Close(conn) => {
                    if let Some(tx) = self.peers.remove(&conn) {
                        let _ = tx.send(Outgoing::Close);
                    }
                }
            }
        }
    }

    fn gone(&mut self, conn: ConnId) {
        self.relay.disconnect(conn);
        self.peers.remove(&conn);
    }
}

type SharedHub = Arc<Mutex<Hub>>;

fn lock(hub: &SharedHub) -> MutexGuard<'_, Hub> {
    hub.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct Server {
    hub: SharedHub,
    shutdown: Arc<AtomicBool>,
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    acceptors: Vec<JoinHandle<()>>,
}

impl Server {
    /// Recovers the store, binds the listeners and starts accepting.
    pub fn start(cfg: &ServerConfig) -> Result<(Server, RecoveryReport), ServeError> {
        let (store, report) = FileLog::open(&cfg.store_path, cfg.flush)?;
        if let Some(torn) = &report.torn {
            warn!("discarded torn record ({} bytes) at offset {}", torn.bytes.len(), torn.offset);
        }
        info!(
            "recovered {} events and {} command audits from {}",
            report.events,
            report.audits,
            cfg.store_path.display()
        );
        let mut relay = Relay::new(cfg.registry()?, store);
        if let Some(t) = &cfg.template {
            relay.set_template(NotificationTemplate::new(t.clone()));
        }
        let hub = Arc::new(Mutex::new(Hub { relay, peers: HashMap::new() }));
        let shutdown = Arc::new(AtomicBool::new(false));

        let tcp = bind(&cfg.bind, cfg.port)?;
        let tcp_addr = tcp.local_addr().map_err(|source| ServeError::Bind { addr: cfg.bind.clone(), source })?;
        let mut acceptors = vec![spawn_acceptor(tcp, hub.clone(), shutdown.clone(), Transport::Tcp)];
        info!("listening for NDJSON sessions on {tcp_addr}");

        let mut ws_addr = None;
        if let Some(port) = cfg.ws_port {
            let ws = bind(&cfg.bind, port)?;
            let addr = ws.local_addr().map_err(|source| ServeError::Bind { addr: cfg.bind.clone(), source })?;
            acceptors.push(spawn_acceptor(ws, hub.clone(), shutdown.clone(), Transport::WebSocket));
            info!("listening for WebSocket sessions on {addr}");
            ws_addr = Some(addr);
        }

        Ok((Server { hub, shutdown, tcp_addr, ws_addr, acceptors }, report))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Runs `f` against the relay under the server lock.
    pub fn with_relay<R>(&self, f: impl FnOnce(&mut Relay<FileLog>) -> R) -> R {
        f(&mut lock(&self.hub).relay)
    }

    /// Stops accepting, closes every session and flushes the store.
    pub fn shutdown(mut self) -> Result<(), StoreError> {
        self.shutdown.store(true, Ordering::SeqCst);
        for t in self.acceptors.drain(..) {
            let _ = t.join();
        }
        let mut hub = lock(&self.hub);
        for (_, tx) in hub.peers.drain() {
            let _ = tx.send(Outgoing::Close);
        }
        hub.relay.store_mut().flush()
    }
}

fn bind(host: &str, port: u16) -> Result<TcpListener, ServeError> {
    let addr = format!("{host}:{port}");
    let listener = TcpListener::bind(&addr).map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    listener
        .set_nonblocking(true)
        .map_err(|source| ServeError::Bind { addr, source })?;
    Ok(listener)
}

#[derive(Clone, Copy)]
enum Transport {
    Tcp,
    WebSocket,
}

fn spawn_acceptor(listener: TcpListener, hub: SharedHub, shutdown: Arc<AtomicBool>, transport: Transport) -> JoinHandle<()> {
    thread::spawn(move || {
        while !shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    debug!("accepted {peer}");
                    let hub = hub.clone();
                    let shutdown = shutdown.clone();
                    thread::spawn(move || {
                        let result = match transport {
                            Transport::Tcp => serve_tcp(stream, hub, shutdown),
                            Transport::WebSocket => serve_ws(stream, hub, shutdown),
                        };
                        if let Err(e) = result {
                            debug!("session with {peer} ended: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
    })
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn serve_tcp(stream: TcpStream, hub: SharedHub, shutdown: Arc<AtomicBool>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let (conn, rx) = lock(&hub).register();

    let mut out_stream = stream.try_clone()?;
    let writer = thread::spawn(move || {
        for item in rx {
            match item {
                Outgoing::Frame(msg) => {
                    if out_stream.write_all(&encode(&msg)).is_err() {
                        break;
                    }
                }
                Outgoing::Close => break,
            }
        }
        let _ = out_stream.shutdown(Shutdown::Both);
    });

    let mut reader = &stream;
    let mut framer = LineFramer::new();
    let mut buf = [0u8; 4096];
    let result = loop {
        match reader.read(&mut buf) {
            Ok(0) => break Ok(()),
            Ok(n) => match framer.push(&buf[..n]) {
                Ok(lines) => {
                    let mut h = lock(&hub);
                    for line in lines {
                        h.inbound(conn, &line);
                    }
                }
                Err(e) => break Err(io::Error::new(io::ErrorKind::InvalidData, e)),
            },
            Err(e) if is_timeout(&e) => {
                if shutdown.load(Ordering::SeqCst) {
                    break Ok(());
                }
            }
            Err(e) => break Err(e),
        }
    };
    lock(&hub).gone(conn);
    let _ = stream.shutdown(Shutdown::Both);
    let _ = writer.join();
    result
}

fn serve_ws(stream: TcpStream, hub: SharedHub, shutdown: Arc<AtomicBool>) -> io::Result<()> {
    use tungstenite::{Error as WsError, Message as WsMessage};

    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let (conn, rx) = lock(&hub).register();

    let result = 'session: loop {
        loop {
            match rx.try_recv() {
                Ok(Outgoing::Frame(msg)) => {
                    let text = String::from_utf8(encode_line(&msg)).expect("frames are UTF-8");
                    if let Err(e) = ws.send(WsMessage::Text(text)) {
                        break 'session Err(io::Error::other(e.to_string()));
                    }
                }
                Ok(Outgoing::Close) | Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    break 'session Ok(());
                }
                Err(TryRecvError::Empty) => break,
            }
        }
        let payload = match ws.read() {
            Ok(WsMessage::Text(t)) => t.into_bytes(),
            Ok(WsMessage::Binary(b)) => b,
            Ok(WsMessage::Close(_)) => break Ok(()),
            Ok(_) => continue,
            Err(WsError::Io(e)) if is_timeout(&e) => {
                if shutdown.load(Ordering::SeqCst) {
                    let _ = ws.close(None);
                    break Ok(());
                }
                continue;
            }
            Err(WsError::ConnectionClosed | WsError::AlreadyClosed) => break Ok(()),
            Err(e) => break Err(io::Error::other(e.to_string())),
        };
        // One frame per message; a trailing LF is allowed.
        let mut h = lock(&hub);
        for line in payload.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            h.inbound(conn, line);
        }
    };
    lock(&hub).gone(conn);
    result
}
