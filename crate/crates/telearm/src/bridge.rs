//! WebSocket bridge for a browser cockpit.
//!
//! Each client first gets a `hello` with the DH table, joint limits,
//! workspace and its role, then the latest `state` snapshot and every newer
//! one. The first client connected while no operator is present becomes the
//! operator; the rest are read-only. Operator targets are clamped exactly as
//! the controller requires and queued for the control loop, latest wins.

use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use telearm_core::master::Workspace;
use telearm_core::{ControlMode, DHChain, DHRow};
use telearm_link::queue::BoundedQueue;
use telearm_link::relay::normalize_addr;
use telearm_link::{LocalCommand, ScriptTarget, PROTO_VERSION};
use tungstenite::{Message, WebSocket};

use crate::config::NodeRole;

/// Commands waiting for the control loop.
pub const COMMAND_CAPACITY: usize = 64;
const CLIENT_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientRole {
    Operator,
    ReadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiMode {
    ConfigurationSpace,
    TaskSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub role: ClientRole,
    pub node: NodeRole,
    pub proto_version: u8,
    pub dh: Vec<DHRow>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub workspace: Workspace,
    pub tick_rate_hz: f64,
}

/// The target in force, after clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TargetEcho {
    TargetJoints {
        q: Vec<f64>,
    },
    /// Orientation as `[w, x, y, z]`.
    TargetPose {
        t: [f64; 3],
        r: [f64; 4],
    },
}

impl From<&ControlMode> for TargetEcho {
    fn from(m: &ControlMode) -> Self {
        match m {
            ControlMode::ConfigurationSpace { q } => TargetEcho::TargetJoints { q: q.to_vec() },
            ControlMode::TaskSpace { pose } => TargetEcho::TargetPose { t: pose.t.to_array(), r: pose.r.vec4() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub q: Vec<f64>,
    pub gripper: f64,
    pub err_t: f64,
    pub err_r: f64,
    /// Leader: last ping round trip. Follower: age of the last leader frame.
    /// `null` when unknown.
    pub latency_ms: Option<f64>,
    pub seq: u64,
    pub mode: Option<UiMode>,
    pub target: Option<TargetEcho>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Hello(Handshake),
    State(StateMessage),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Inbound {
    TargetJoints {
        q: Vec<f64>,
        #[serde(default)]
        gripper: Option<f64>,
    },
    TargetPose {
        t: [f64; 3],
        #[serde(default)]
        rpy: [f64; 3],
        #[serde(default)]
        gripper: Option<f64>,
    },
    Mode {
        mode: UiMode,
    },
    Gripper {
        value: f64,
    },
}

const INBOUND_TYPES: [&str; 4] = ["target_joints", "target_pose", "mode", "gripper"];

/// What an inbound text frame amounts to.
#[derive(Debug, Clone, PartialEq)]
pub enum Interpretation {
    Command(LocalCommand),
    Mode(UiMode),
    /// Unknown `type`; ignored and counted.
    Unknown(String),
    /// Reply with an error frame; the connection stays open.
    Error(String),
}

/// Static facts the handshake advertises and the clamping needs.
#[derive(Debug, Clone)]
pub struct BridgeInfo {
    pub node: NodeRole,
    pub chain: DHChain,
    pub workspace: Workspace,
    pub tick_rate_hz: f64,
}

impl BridgeInfo {
    pub fn handshake(&self, role: ClientRole) -> Handshake {
        Handshake {
            role,
            node: self.node,
            proto_version: PROTO_VERSION,
            dh: self.chain.rows().to_vec(),
            q_min: self.chain.q_min().to_vec(),
            q_max: self.chain.q_max().to_vec(),
            workspace: self.workspace,
            tick_rate_hz: self.tick_rate_hz,
        }
    }

    /// Parses and validates one inbound message. `gripper` fills in a
    /// target that does not carry one.
    pub fn interpret(&self, text: &str, gripper: f64) -> Interpretation {
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return Interpretation::Error(format!("malformed JSON: {e}")),
        };
        let Some(kind) = value.get("type").and_then(Value::as_str).map(str::to_owned) else {
            return Interpretation::Error("message has no string `type`".into());
        };
        if !INBOUND_TYPES.contains(&kind.as_str()) {
            return Interpretation::Unknown(kind);
        }
        let msg: Inbound = match serde_json::from_value(value) {
            Ok(m) => m,
            Err(e) => return Interpretation::Error(format!("bad `{kind}` message: {e}")),
        };
        match msg {
            Inbound::TargetJoints { q, gripper: g } => {
                if q.len() != self.chain.dof() {
                    return Interpretation::Error(format!(
                        "target_joints needs {} values, got {}",
                        self.chain.dof(),
                        q.len()
                    ));
                }
                let t = ScriptTarget::TargetJoints { q, gripper: g };
                Interpretation::Command(LocalCommand::Target(t.to_payload(&self.chain, &self.workspace, gripper)))
            }
            Inbound::TargetPose { t, rpy, gripper: g } => {
                let t = ScriptTarget::TargetPose { t, rpy, gripper: g };
                Interpretation::Command(LocalCommand::Target(t.to_payload(&self.chain, &self.workspace, gripper)))
            }
            Inbound::Mode { mode } => Interpretation::Mode(mode),
            Inbound::Gripper { value } => Interpretation::Command(LocalCommand::Gripper(value.clamp(0.0, 1.0))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BridgeStats {
    pub clients: u64,
    pub commands: u64,
    pub malformed: u64,
    pub unknown_types: u64,
    /// Commands sent by read-only clients.
    pub refused: u64,
}

#[derive(Default)]
struct Counters {
    clients: AtomicU64,
    commands: AtomicU64,
    malformed: AtomicU64,
    unknown_types: AtomicU64,
    refused: AtomicU64,
}

struct Shared {
    info: BridgeInfo,
    latest: Mutex<Option<(u64, Arc<str>)>>,
    commands: Arc<BoundedQueue<LocalCommand>>,
    operator: Mutex<Option<u64>>,
    mode: Mutex<Option<UiMode>>,
    gripper: Mutex<f64>,
    next_id: AtomicU64,
    stop: AtomicBool,
    counters: Counters,
    clients: Mutex<Vec<JoinHandle<()>>>,
}

pub struct UiBridge {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl UiBridge {
    /// Binds `addr` (`:8080` means all interfaces) and starts accepting.
    pub fn start(addr: &str, info: BridgeInfo) -> io::Result<Self> {
        let listener = TcpListener::bind(normalize_addr(addr))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            info,
            latest: Mutex::new(None),
            commands: Arc::new(BoundedQueue::new(COMMAND_CAPACITY)),
            operator: Mutex::new(None),
            mode: Mutex::new(None),
            gripper: Mutex::new(0.0),
            next_id: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            counters: Counters::default(),
            clients: Mutex::new(Vec::new()),
        });
        let s = Arc::clone(&shared);
        let acceptor = thread::spawn(move || accept_loop(listener, s));
        Ok(Self { shared, addr, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Operator commands, oldest first.
    pub fn commands(&self) -> Arc<BoundedQueue<LocalCommand>> {
        Arc::clone(&self.shared.commands)
    }

    /// Mode last selected by the operator.
    pub fn mode(&self) -> Option<UiMode> {
        *self.shared.mode.lock().expect("bridge lock")
    }

    /// Replaces the snapshot every client is sent next. The `mode` field is
    /// filled from the operator's selection when the caller leaves it empty.
    pub fn publish(&self, mut state: StateMessage) {
        if state.mode.is_none() {
            state.mode = self.mode();
        }
        let seq = state.seq;
        let text: Arc<str> = serde_json::to_string(&Outbound::State(state)).expect("state serializes").into();
        *self.shared.latest.lock().expect("bridge lock") = Some((seq, text));
    }

    pub fn stats(&self) -> BridgeStats {
        let c = &self.shared.counters;
        BridgeStats {
            clients: c.clients.load(Ordering::Relaxed),
            commands: c.commands.load(Ordering::Relaxed),
            malformed: c.malformed.load(Ordering::Relaxed),
            unknown_types: c.unknown_types.load(Ordering::Relaxed),
            refused: c.refused.load(Ordering::Relaxed),
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let clients = std::mem::take(&mut *self.shared.clients.lock().expect("bridge lock"));
        for c in clients {
            let _ = c.join();
        }
    }
}

impl Drop for UiBridge {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let s = Arc::clone(&shared);
                let h = thread::spawn(move || {
                    let _ = serve_client(stream, &s);
                });
                let mut clients = shared.clients.lock().expect("bridge lock");
                clients.retain(|c| !c.is_finished());
                clients.push(h);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

#[allow(clippy::result_large_err)]
fn send(ws: &mut WebSocket<TcpStream>, msg: &Outbound) -> tungstenite::Result<()> {
    ws.send(Message::text(serde_json::to_string(msg).expect("outbound serializes")))
}

#[allow(clippy::result_large_err)]
fn serve_client(stream: TcpStream, shared: &Shared) -> tungstenite::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::Io(ErrorKind::TimedOut.into()),
    })?;
    ws.get_ref().set_read_timeout(Some(CLIENT_POLL))?;

    let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
    shared.counters.clients.fetch_add(1, Ordering::Relaxed);
    let role = {
        let mut op = shared.operator.lock().expect("bridge lock");
        if op.is_none() {
            *op = Some(id);
            ClientRole::Operator
        } else {
            ClientRole::ReadOnly
        }
    };
    let result = client_loop(&mut ws, shared, role);
    if role == ClientRole::Operator {
        *shared.operator.lock().expect("bridge lock") = None;
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

#[allow(clippy::result_large_err)]
fn client_loop(ws: &mut WebSocket<TcpStream>, shared: &Shared, role: ClientRole) -> tungstenite::Result<()> {
    send(ws, &Outbound::Hello(shared.info.handshake(role)))?;
    let mut sent: Option<u64> = None;
    while !shared.stop.load(Ordering::SeqCst) {
        let latest = shared.latest.lock().expect("bridge lock").clone();
        if let Some((seq, text)) = latest {
            if sent != Some(seq) {
                ws.send(Message::text(text.to_string()))?;
                sent = Some(seq);
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(reply) = handle_text(text.as_str(), shared, role) {
                    send(ws, &reply)?;
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn handle_text(text: &str, shared: &Shared, role: ClientRole) -> Option<Outbound> {
    let c = &shared.counters;
    let gripper = *shared.gripper.lock().expect("bridge lock");
    let interpretation = shared.info.interpret(text, gripper);
    let is_command = matches!(interpretation, Interpretation::Command(_) | Interpretation::Mode(_));
    if is_command && role == ClientRole::ReadOnly {
        c.refused.fetch_add(1, Ordering::Relaxed);
        return Some(Outbound::Error { message: "read-only client: another client is the operator".into() });
    }
    match interpretation {
        Interpretation::Command(cmd) => {
            let g = match &cmd {
                LocalCommand::Gripper(g) => Some(*g),
                LocalCommand::Target(p) => match p {
                    telearm_link::Payload::JointTarget { gripper, .. }
                    | telearm_link::Payload::PoseTarget { gripper, .. } => Some(*gripper),
                    _ => None,
                },
            };
            if let Some(g) = g {
                *shared.gripper.lock().expect("bridge lock") = g;
            }
            shared.commands.push(cmd, true);
            c.commands.fetch_add(1, Ordering::Relaxed);
            None
        }
        Interpretation::Mode(m) => {
            *shared.mode.lock().expect("bridge lock") = Some(m);
            c.commands.fetch_add(1, Ordering::Relaxed);
            None
        }
        Interpretation::Unknown(_) => {
            c.unknown_types.fetch_add(1, Ordering::Relaxed);
            None
        }
        Interpretation::Error(message) => {
            c.malformed.fetch_add(1, Ordering::Relaxed);
            Some(Outbound::Error { message })
        }
    }
}
