//! Blocking NDJSON client used by the node runner, the history command and
//! tests.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use borderwatch_core::protocol::{decode, encode, DecodeError, FrameOverflow, LineFramer, Message, Role, PROTO_VERSION};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection: {0}")]
    Io(#[from] io::Error),
    #[error("server closed the connection")]
    Closed,
    #[error("undecodable frame from server: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Framing(#[from] FrameOverflow),
    #[error("login rejected: {0}")]
    Rejected(String),
    #[error("server error {code}: {detail}")]
    Server { code: String, detail: String },
    #[error("timed out waiting for the server")]
    Timeout,
}

pub struct Client {
    stream: TcpStream,
    framer: LineFramer,
    inbox: VecDeque<Message>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, framer: LineFramer::new(), inbox: VecDeque::new() })
    }

    pub fn connect_timeout(addr: &str, timeout: Duration) -> Result<Self, ClientError> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("no address for {addr}"));
        for sa in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sa, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(Self { stream, framer: LineFramer::new(), inbox: VecDeque::new() });
                }
                Err(e) => last = e,
            }
        }
        Err(last.into())
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.stream.write_all(&encode(msg))?;
        Ok(())
    }

    /// Writes raw bytes, bypassing the codec.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    /// Next frame from the server, or `None` if nothing arrives within `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Message>, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 4096];
        loop {
            if let Some(m) = self.inbox.pop_front() {
                return Ok(Some(m));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(ClientError::Closed),
                Ok(n) => {
                    for line in self.framer.push(&buf[..n])? {
                        self.inbox.push_back(decode(&line)?);
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Waits for the first frame accepted by `pick`, discarding others.
    pub fn recv_matching<T>(
        &mut self,
        timeout: Duration,
        mut pick: impl FnMut(&Message) -> Option<T>,
    ) -> Result<T, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.recv(left)? {
                None => return Err(ClientError::Timeout),
                Some(m) => {
                    if let Some(t) = pick(&m) {
                        return Ok(t);
                    }
                }
            }
        }
    }

    /// Logs in and returns the id the server assigned.
    pub fn login(&mut self, role: Role, token: &str, timeout: Duration) -> Result<String, ClientError> {
        self.send(&Message::Login { role, auth: token.to_string(), proto: PROTO_VERSION })?;
        match self.recv(timeout)? {
            Some(Message::LoginAck { ok: true, id, .. }) => Ok(id),
            Some(Message::LoginAck { ok: false, error, .. }) => {
                Err(ClientError::Rejected(error.unwrap_or_else(|| "unspecified".into())))
            }
            Some(Message::Error { code, detail }) => Err(ClientError::Server { code, detail }),
            Some(other) => Err(ClientError::Server { code: "unexpected".into(), detail: other.type_name().into() }),
            None => Err(ClientError::Timeout),
        }
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}
