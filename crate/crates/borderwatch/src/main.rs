use std::fs;
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use borderwatch::config::ServerConfig;
use borderwatch::history::{self, HistoryQuery};
use borderwatch::node_runner::{self, DistanceScript, DistanceSource, RunError, RunOptions};
use borderwatch::server::{ServeError, Server};
use borderwatch::ClientError;
use borderwatch_core::node::NodeConfig;
use borderwatch_core::sensor::IrSensorConfig;
use borderwatch_core::sim::{self, ScenarioScript};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

const EXIT_USAGE: u8 = 2;
const EXIT_AUTH: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "borderwatch", version, about = "Border intrusion detection relay, node runner and simulator")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the relay server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        ws_port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Run one device node against a server.
    Node {
        #[arg(long)]
        server: String,
        #[arg(long)]
        auth: String,
        #[arg(long, value_enum, default_value_t = SourceKind::Stdin)]
        distance_source: SourceKind,
        /// JSON array of {"at_ms", "distance_cm"} steps, for `--distance-source script`.
        #[arg(long)]
        script: Option<PathBuf>,
        /// How long a distance typed on stdin stays in front of the sensor.
        #[arg(long, default_value_t = 1000)]
        hold_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Give up waiting for acknowledgements this long after the source ends.
        #[arg(long, default_value_t = 5000)]
        drain_ms: u64,
    },
    /// Run a scenario script on the deterministic simulator.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Query stored events as an operator.
    History {
        #[arg(long)]
        server: String,
        #[arg(long)]
        auth: String,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        #[arg(long)]
        device: Option<String>,
        #[arg(long, default_value_t = 1000)]
        limit: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceKind {
    Stdin,
    Script,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self { code, message: message.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Serve { config, port, ws_port, store } => serve(config, port, ws_port, store),
        Command::Node { server, auth, distance_source, script, hold_ms, seed, drain_ms } => {
            node(server, auth, distance_source, script, hold_ms, seed, drain_ms)
        }
        Command::Simulate { script, seed, report } => simulate(script, seed, report),
        Command::History { server, auth, from, to, device, limit, json } => {
            let q = HistoryQuery { device_id: device, from_ms: from, to_ms: to, limit };
            show_history(&server, &auth, &q, json)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("borderwatch: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn serve(path: PathBuf, port: Option<u16>, ws_port: Option<u16>, store: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ServerConfig::load(&path).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    if let Some(p) = port {
        cfg.port = p;
    }
    if ws_port.is_some() {
        cfg.ws_port = ws_port;
    }
    if let Some(s) = store {
        cfg.store_path = s;
    }

    let (server, _) = Server::start(&cfg).map_err(|e| match e {
        ServeError::Registry(_) => Failure::new(EXIT_USAGE, e),
        _ => Failure::new(EXIT_IO, e),
    })?;
    // Printed so scripts can find the port when 0 was requested.
    println!("listening on {}", server.local_addr());
    if let Some(ws) = server.ws_addr() {
        println!("websocket on {ws}");
    }

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot install signal handler: {e}")))?;
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    info!("shutting down");
    server.shutdown().map_err(|e| Failure::new(EXIT_IO, e))
}

fn node(
    server: String,
    auth: String,
    kind: SourceKind,
    script: Option<PathBuf>,
    hold_ms: u64,
    seed: u64,
    drain_ms: u64,
) -> Result<(), Failure> {
    let source = match (kind, script) {
        (SourceKind::Script, Some(path)) => {
            DistanceSource::Script(DistanceScript::load(&path).map_err(|e| Failure::new(EXIT_USAGE, e))?)
        }
        (SourceKind::Script, None) => {
            return Err(Failure::new(EXIT_USAGE, "--distance-source script needs --script PATH"));
        }
        (SourceKind::Stdin, _) => {
            DistanceSource::Lines { input: Box::new(BufReader::new(io::stdin())), hold_ms }
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot install signal handler: {e}")))?;

    let opts = RunOptions {
        server: server.clone(),
        node: NodeConfig { auth_token: auth, ..NodeConfig::default() },
        sensor: IrSensorConfig::default(),
        seed,
        max_runtime: None,
        drain_timeout: Duration::from_millis(drain_ms),
        stop,
    };
    let summary = node_runner::run(opts, source).map_err(|e| match e {
        RunError::AuthRejected => Failure::new(EXIT_AUTH, e),
        RunError::Io(_) => Failure::new(EXIT_IO, e),
        RunError::Script(_) | RunError::Config(_) | RunError::Sensor(_) => Failure::new(EXIT_USAGE, e),
    })?;
    info!("node finished in {:?}: {:?}", summary.final_phase, summary.counters);
    if summary.unacked > 0 {
        return Err(Failure::new(
            EXIT_IO,
            format!("{} notification(s) never acknowledged by {server}", summary.unacked),
        ));
    }
    Ok(())
}

fn simulate(path: PathBuf, seed: u64, report: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))?;
    let script = ScenarioScript::from_json(&text)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("invalid script {}: {e}", path.display())))?;
    let result = sim::run(&script, seed).map_err(|e| {
        let lines: Vec<String> = e.0.iter().map(ToString::to_string).collect();
        Failure::new(EXIT_USAGE, format!("{e}\n  {}", lines.join("\n  ")))
    })?;
    let mut json = result.to_json_pretty();
    json.push('\n');
    match report {
        Some(out) => fs::write(&out, json)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", out.display()))),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn show_history(server: &str, token: &str, q: &HistoryQuery, json: bool) -> Result<(), Failure> {
    let events = history::fetch(server, token, q, Duration::from_secs(5)).map_err(|e| match e {
        ClientError::Rejected(_) => Failure::new(EXIT_AUTH, e),
        ClientError::Server { ref code, .. } if code == "bad_request" => Failure::new(EXIT_USAGE, e),
        _ => Failure::new(EXIT_IO, e),
    })?;
    if json {
        print!("{}", history::render_json(&events));
    } else {
        print!("{}", history::render_table(&events));
    }
    Ok(())
}
