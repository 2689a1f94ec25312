//! Runs one simulated node against a live server on the wall clock.
//!
//! Obstacle distances come either from a JSON script of timed steps or from
//! lines typed on stdin: a number is an obstacle at that many centimetres,
//! held for `hold_ms`; `clear` removes it.

use std::io::{self, BufRead, Read};
use std::net::{Shutdown, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use borderwatch_core::node::{DeviceNode, NodeConfig, NodeConfigError, NodeCounters, Phase};
use borderwatch_core::protocol::{decode, encode, LineFramer, Message};
use borderwatch_core::sensor::{sample, IrSensorConfig, SensorError};
use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceStep {
    pub at_ms: u64,
    /// `null` clears the path.
    pub distance_cm: Option<f64>,
}

/// Timed obstacle steps; each holds until the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScript {
    steps: Vec<DistanceStep>,
}

impl DistanceScript {
    pub fn new(mut steps: Vec<DistanceStep>) -> Self {
        steps.sort_by_key(|s| s.at_ms);
        Self { steps }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let steps: Vec<DistanceStep> =
            serde_json::from_str(&text).map_err(|e| RunError::Script(e.to_string()))?;
        Ok(Self::new(steps))
    }

    pub fn distance_at(&self, elapsed_ms: u64) -> Option<f64> {
        self.steps.iter().take_while(|s| s.at_ms <= elapsed_ms).last().and_then(|s| s.distance_cm)
    }

    pub fn end_ms(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.at_ms)
    }
}

pub enum DistanceSource {
    Script(DistanceScript),
    Lines { input: Box<dyn BufRead + Send>, hold_ms: u64 },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("server rejected the auth token")]
    AuthRejected,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("distance script: {0}")]
    Script(String),
    #[error(transparent)]
    Config(#[from] NodeConfigError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

pub struct RunOptions {
    pub server: String,
    pub node: NodeConfig,
    pub sensor: IrSensorConfig,
    pub seed: u64,
    /// Stop after this long regardless of the distance source.
    pub max_runtime: Option<Duration>,
    /// After the source is exhausted, wait at most this long for acks.
    pub drain_timeout: Duration,
    pub stop: Arc<AtomicBool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub final_phase: Phase,
    pub counters: NodeCounters,
    pub unacked: usize,
}

enum LinkEvent {
    Frame(Message),
    Closed,
}

struct Link {
    stream: TcpStream,
    rx: Receiver<LinkEvent>,
}

impl Link {
    fn open(server: &str) -> io::Result<Self> {
        use std::net::ToSocketAddrs;
        let addr = server
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "server address did not resolve"))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(1))?;
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut framer = LineFramer::new();
            let mut buf = [0u8; 4096];
            loop {
                match reader.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let Ok(lines) = framer.push(&buf[..n]) else { break };
                        for line in lines {
                            match decode(&line) {
                                Ok(m) => {
                                    if tx.send(LinkEvent::Frame(m)).is_err() {
                                        return;
                                    }
                                }
                                Err(e) => warn!("undecodable frame from server: {e}"),
                            }
                        }
                    }
                }
            }
            let _ = tx.send(LinkEvent::Closed);
        });
        Ok(Self { stream, rx })
    }

    fn send(&mut self, msg: &Message) -> io::Result<()> {
        use std::io::Write;
        self.stream.write_all(&encode(msg))
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

enum Typed {
    Obstacle(f64),
    Clear,
    Eof,
}

fn spawn_line_reader(input: Box<dyn BufRead + Send>) -> Receiver<Typed> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in input.lines() {
            let Ok(line) = line else { break };
            let t = line.trim();
            let item = if t.is_empty() || t.eq_ignore_ascii_case("clear") {
                Typed::Clear
            } else {
                match t.parse::<f64>() {
                    Ok(d) if d > 0.0 => Typed::Obstacle(d),
                    _ => {
                        warn!("ignoring `{t}`: expected a positive distance in cm or `clear`");
                        continue;
                    }
                }
            };
            if tx.send(item).is_err() {
                return;
            }
        }
        let _ = tx.send(Typed::Eof);
    });
    rx
}

enum Source {
    Script(DistanceScript),
    Lines { rx: Receiver<Typed>, hold: Duration, obstacle: Option<(f64, Instant)>, eof: bool },
}

impl Source {
    fn distance(&mut self, elapsed_ms: u64) -> Option<f64> {
        match self {
            Source::Script(s) => s.distance_at(elapsed_ms),
            Source::Lines { rx, hold, obstacle, eof } => {
                loop {
                    match rx.try_recv() {
                        Ok(Typed::Obstacle(d)) => {
                            info!("obstacle at {d} cm");
                            *obstacle = Some((d, Instant::now() + *hold));
                        }
                        Ok(Typed::Clear) => *obstacle = None,
                        Ok(Typed::Eof) | Err(TryRecvError::Disconnected) => {
                            *eof = true;
                            break;
                        }
                        Err(TryRecvError::Empty) => break,
                    }
                }
                match obstacle {
                    Some((d, until)) if Instant::now() < *until => Some(*d),
                    _ => {
                        *obstacle = None;
                        None
                    }
                }
            }
        }
    }

    fn exhausted(&self, elapsed_ms: u64) -> bool {
        match self {
            Source::Script(s) => elapsed_ms > s.end_ms(),
            Source::Lines { eof, obstacle, .. } => *eof && obstacle.is_none(),
        }
    }
}

/// Drives the node until the source is exhausted and its notifications are
/// acknowledged, the runtime limit passes, or `stop` is raised.
pub fn run(opts: RunOptions, source: DistanceSource) -> Result<RunSummary, RunError> {
    let mut node = DeviceNode::new(opts.node.clone(), opts.sensor.clone())?;
    opts.sensor.validate()?;
    let period = Duration::from_millis(opts.node.sample_period_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut source = match source {
        DistanceSource::Script(s) => Source::Script(s),
        DistanceSource::Lines { input, hold_ms } => Source::Lines {
            rx: spawn_line_reader(input),
            hold: Duration::from_millis(hold_ms),
            obstacle: None,
            eof: false,
        },
    };

    let start = Instant::now();
    let mut link: Option<Link> = None;
    let mut drain_deadline: Option<Instant> = None;
    let mut next_tick = start;

    loop {
        let now = start.elapsed().as_millis() as u64;
        if opts.stop.load(Ordering::SeqCst) || opts.max_runtime.is_some_and(|m| start.elapsed() >= m) {
            break;
        }

        let mut out = Vec::new();
        let mut lost = false;
        if let Some(l) = &link {
            loop {
                match l.rx.try_recv() {
                    Ok(LinkEvent::Frame(m)) => {
                        debug!("<- {}", m.type_name());
                        out.extend(node.handle_message(now, &m));
                    }
                    Ok(LinkEvent::Closed) | Err(TryRecvError::Disconnected) => {
                        lost = true;
                        break;
                    }
                    Err(TryRecvError::Empty) => break,
                }
            }
        }
        if node.phase() == Phase::AuthFailed {
            return Err(RunError::AuthRejected);
        }
        if lost {
            info!("connection to {} lost", opts.server);
            link = None;
        }
        if link.is_none() && matches!(node.phase(), Phase::Boot | Phase::LinkConnecting) {
            match Link::open(&opts.server) {
                Ok(l) => link = Some(l),
                Err(e) => debug!("connect to {} failed: {e}", opts.server),
            }
        }
        let before = node.phase();
        out.extend(node.advance_connection(now, link.is_some(), None));
        if node.phase() != before {
            info!("{before:?} -> {:?}", node.phase());
        }
        if node.phase() == Phase::Backoff {
            link = None;
        }

        let distance = source.distance(now);
        let reading = sample(&opts.sensor, distance, &mut rng)?;
        out.extend(node.tick(now, reading));

        if let Some(l) = &mut link {
            for m in &out {
                if let Err(e) = l.send(m) {
                    debug!("send failed: {e}");
                    break;
                }
            }
        }

        if source.exhausted(now) {
            let deadline = *drain_deadline.get_or_insert_with(|| Instant::now() + opts.drain_timeout);
            let drained = node.phase() == Phase::Online && node.pending_len() == 0;
            if drained || Instant::now() >= deadline {
                break;
            }
        }

        next_tick += period;
        let wait = next_tick.saturating_duration_since(Instant::now());
        if wait.is_zero() {
            next_tick = Instant::now();
        } else {
            thread::sleep(wait);
        }
    }

    Ok(RunSummary { final_phase: node.phase(), counters: *node.counters(), unacked: node.pending_len() })
}
