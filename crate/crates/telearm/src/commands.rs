//! The subcommands as library functions. Each returns a summary for the
//! caller to print; long-running ones stop when `shutdown` is set.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use telearm_core::controller::rotation_error;
use telearm_core::master::{self, CalibrationState, PotFilter, PotReading};
use telearm_core::{fkm, mathcore, ControlMode, DHChain, DeviceError, DevicePort, Pose};
use telearm_link::follower::FollowerError;
use telearm_link::session::ServeError;
use telearm_link::{
    serve_follower, Follower, LeaderSession, LocalCommand, Payload, RelayConfig, ScriptTarget, ScriptedTarget,
    ServeOptions, TickContext,
};
use thiserror::Error;

use crate::bridge::{BridgeInfo, StateMessage, TargetEcho, UiBridge};
use crate::config::{AppConfig, ConfigError, DeviceSpec, NodeRole};
use crate::device::{open_device, SerialDevice, TtyPort, REPLY_TIMEOUT};
use crate::ticklog::{read_log_file, replay, LogError, LogHeader, LogWriter, ReplayReport, TickRecord};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("device: {0}")]
    Device(#[from] DeviceError),
    #[error("network: {0}")]
    Network(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("{0}")]
    Internal(String),
}

impl AppError {
    /// 2 configuration or input, 3 device, 4 network, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Log(_) => 2,
            AppError::Device(_) | AppError::Calibration(_) => 3,
            AppError::Network(_) => 4,
            AppError::Internal(_) => 1,
        }
    }
}

impl From<FollowerError> for AppError {
    fn from(e: FollowerError) -> Self {
        match e {
            FollowerError::Device(d) => AppError::Device(d),
            FollowerError::Controller(c) => AppError::Internal(c.to_string()),
        }
    }
}

impl From<ServeError> for AppError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Bind { .. } => AppError::Network(e.to_string()),
            ServeError::Endpoint(a) => AppError::Config(ConfigError::Invalid(format!("bad endpoint `{a}`"))),
            ServeError::Follower(f) => f.into(),
        }
    }
}

/// Options shared by the long-running commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this long (wall clock, or simulated time for `sim`).
    pub duration: Option<Duration>,
    /// JSONL tick log.
    pub log: Option<PathBuf>,
}

/// Final state of a follower or local simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub ticks: u64,
    pub final_q: Vec<f64>,
    pub q_d: Vec<f64>,
    pub gripper: f64,
    /// ‖q − q_d‖.
    pub tracking: f64,
    pub err_t: f64,
    pub err_r: f64,
    /// Worst lateness of a control tick against its schedule.
    pub max_lateness_ms: f64,
    pub sessions: u64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn log_header(cfg: &AppConfig, node: NodeRole, chain: &DHChain, q0: &[f64]) -> LogHeader {
    LogHeader {
        node,
        device: cfg.device.to_string(),
        chain: chain.to_config_string(),
        controller: cfg.controller(),
        servo: cfg.servo.clone(),
        q0: q0.to_vec(),
    }
}

fn open_log(path: Option<&Path>, header: &LogHeader) -> Result<Option<LogWriter<BufWriter<File>>>, AppError> {
    path.map(|p| {
        LogWriter::create(p, header)
            .map_err(|source| AppError::Config(ConfigError::Io { path: p.to_path_buf(), source }))
    })
    .transpose()
}

fn start_bridge(cfg: &AppConfig, node: NodeRole, chain: &DHChain) -> Result<Option<UiBridge>, AppError> {
    let Some(addr) = &cfg.endpoints.ui else { return Ok(None) };
    let info = BridgeInfo { node, chain: chain.clone(), workspace: cfg.workspace, tick_rate_hz: cfg.tick_rate_hz };
    let bridge = UiBridge::start(addr, info).map_err(|e| AppError::Network(format!("ui bridge on {addr}: {e}")))?;
    announce(&format!("ui listening on ws://{}", bridge.local_addr()));
    Ok(Some(bridge))
}

/// Prints a status line immediately; scripts wait for these.
fn announce(line: &str) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn tick_record<D: DevicePort>(
    f: &Follower<D>,
    k: u64,
    t: f64,
    dt: f64,
    ctx_tick: &telearm_link::follower::FollowerTick,
) -> TickRecord {
    let (err_t, err_r) = ctx_tick.control.as_ref().map_or((0.0, 0.0), |c| (c.err_t, c.err_r));
    TickRecord {
        k,
        t,
        dt,
        target: f.mode().cloned(),
        gripper_target: f.gripper_target(),
        q_d: f.q_d().to_vec(),
        q: ctx_tick.state.q.to_vec(),
        gripper: ctx_tick.state.gripper,
        err_t,
        err_r,
    }
}

fn state_message<D: DevicePort>(f: &Follower<D>, rec: &TickRecord, latency_ms: Option<f64>) -> StateMessage {
    StateMessage {
        q: rec.q.clone(),
        gripper: rec.gripper,
        err_t: rec.err_t,
        err_r: rec.err_r,
        latency_ms,
        seq: rec.k,
        mode: None,
        target: f.mode().map(TargetEcho::from),
    }
}

fn summary<D: DevicePort>(
    f: &Follower<D>,
    ticks: u64,
    last: Option<&TickRecord>,
    max_lateness: Duration,
) -> RunSummary {
    let q = f.state().q.to_vec();
    let q_d = f.q_d().to_vec();
    RunSummary {
        ticks,
        tracking: euclid(&q, &q_d),
        final_q: q,
        q_d,
        gripper: f.state().gripper,
        err_t: last.map_or(0.0, |r| r.err_t),
        err_r: last.map_or(0.0, |r| r.err_r),
        max_lateness_ms: max_lateness.as_secs_f64() * 1e3,
        sessions: f.stats().sessions,
    }
}

/// Follower: network session, controller and device on one fixed-period loop.
pub fn run_follow(cfg: &AppConfig, opts: &RunOptions, shutdown: Arc<AtomicBool>) -> Result<RunSummary, AppError> {
    let chain = cfg.load_chain()?;
    cfg.validate_with(&chain)?;
    let period = cfg.period();
    let (device, q_init) = open_device(&cfg.device, &chain, &cfg.servo, &cfg.q0, period)?;
    let mut follower = Follower::new(chain.clone(), cfg.follower(), device, &q_init)?;
    let bridge = start_bridge(cfg, NodeRole::Follower, &chain)?;
    let mut log = open_log(opts.log.as_deref(), &log_header(cfg, NodeRole::Follower, &chain, &q_init))?;

    let mut serve = ServeOptions::new(Duration::from_secs_f64(period), Arc::clone(&shutdown));
    serve.faults = (!cfg.faults.is_passthrough()).then_some((cfg.faults, cfg.seed));
    serve.local = bridge.as_ref().map(UiBridge::commands);
    let endpoint = cfg.endpoints.follower_endpoint();
    announce(&format!("follow device={} endpoint={endpoint:?} tick_rate_hz={}", cfg.device, cfg.tick_rate_hz));

    let limit_us = opts.duration.map(|d| d.as_micros() as u64);
    let mut ticks = 0u64;
    let mut last: Option<TickRecord> = None;
    let mut max_lateness = Duration::ZERO;
    let mut log_error: Option<io::Error> = None;
    let result = serve_follower(&endpoint, &mut follower, &serve, |f, ctx: &TickContext<'_>| {
        let rec = tick_record(f, ticks, ctx.now_us as f64 * 1e-6, period, ctx.tick);
        ticks += 1;
        // The first tick absorbs start-up; later ones measure the loop.
        if ticks > 1 {
            max_lateness = max_lateness.max(ctx.lateness);
        }
        if let Some(w) = log.as_mut() {
            if let Err(e) = w.tick(&rec) {
                log_error = Some(e);
                shutdown.store(true, Ordering::SeqCst);
            }
        }
        if let Some(b) = &bridge {
            let latency = f.last_rx_us().map(|rx| ctx.now_us.saturating_sub(rx) as f64 * 1e-3);
            b.publish(state_message(f, &rec, latency));
        }
        if limit_us.is_some_and(|l| ctx.now_us >= l) {
            shutdown.store(true, Ordering::SeqCst);
        }
        last = Some(rec);
    });
    if let Some(w) = log.as_mut() {
        w.flush().map_err(|e| AppError::Internal(format!("flushing the tick log: {e}")))?;
    }
    result?;
    if let Some(e) = log_error {
        return Err(AppError::Internal(format!("writing the tick log: {e}")));
    }
    Ok(summary(&follower, ticks, last.as_ref(), max_lateness))
}

/// What `sim` drives toward.
#[derive(Debug, Clone, PartialEq)]
pub enum SimTarget {
    /// Hold the start posture (or follow UI commands).
    Hold,
    Joints(Vec<f64>),
    Pose {
        t: [f64; 3],
        rpy: [f64; 3],
    },
    Script(Vec<ScriptedTarget>),
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub target: SimTarget,
    /// Tick count; by default 500 ticks, or the script length plus `hold`.
    pub steps: Option<u64>,
    /// Extra time after the last script entry.
    pub hold: Duration,
    /// Pace ticks on the wall clock; implied by a UI bridge or a serial device.
    pub realtime: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { target: SimTarget::Hold, steps: None, hold: Duration::from_secs(1), realtime: false }
    }
}

pub const DEFAULT_SIM_STEPS: u64 = 500;

/// Index of the script entries due by `t_ms`, starting at `next`.
fn due(script: &[ScriptedTarget], next: usize, t_ms: u64) -> usize {
    next + script[next..].iter().take_while(|s| s.t_ms <= t_ms).count()
}

/// Local closed loop without a network.
pub fn run_sim(
    cfg: &AppConfig,
    sim: &SimOptions,
    opts: &RunOptions,
    shutdown: Arc<AtomicBool>,
) -> Result<RunSummary, AppError> {
    let chain = cfg.load_chain()?;
    cfg.validate_with(&chain)?;
    let period = cfg.period();
    let (device, q_init) = open_device(&cfg.device, &chain, &cfg.servo, &cfg.q0, period)?;
    let mut follower = Follower::new(chain.clone(), cfg.follower(), device, &q_init)?;
    let bridge = start_bridge(cfg, NodeRole::Sim, &chain)?;
    let realtime = sim.realtime || bridge.is_some() || matches!(cfg.device, DeviceSpec::Serial(_));
    let mut log = open_log(opts.log.as_deref(), &log_header(cfg, NodeRole::Sim, &chain, &q_init))?;

    let script: &[ScriptedTarget] = match &sim.target {
        SimTarget::Joints(q) => {
            if q.len() != chain.dof() {
                return Err(
                    ConfigError::Invalid(format!("target has {} joints, the chain {}", q.len(), chain.dof())).into()
                );
            }
            follower.set_mode(ControlMode::ConfigurationSpace { q: chain.clamp(q) });
            &[]
        }
        SimTarget::Pose { t, rpy } => {
            follower.set_mode(ControlMode::TaskSpace { pose: cfg.workspace.pose(*t, *rpy) });
            &[]
        }
        SimTarget::Script(s) => s,
        SimTarget::Hold => &[],
    };
    let period_ms = period * 1e3;
    let steps = match (sim.steps, opts.duration, script.last()) {
        (Some(n), _, _) => Some(n),
        (None, Some(d), _) => Some((d.as_secs_f64() / period).round() as u64),
        (None, None, Some(last)) => Some(((last.t_ms as f64 + sim.hold.as_secs_f64() * 1e3) / period_ms).ceil() as u64),
        // A live UI session runs until interrupted.
        (None, None, None) if realtime && bridge.is_some() => None,
        (None, None, None) => Some(DEFAULT_SIM_STEPS),
    };

    let origin = Instant::now();
    let mut next_script = 0;
    let mut gripper = 0.0;
    let mut ticks = 0u64;
    let mut last: Option<TickRecord> = None;
    let mut max_lateness = Duration::ZERO;
    while steps.is_none_or(|n| ticks < n) && !shutdown.load(Ordering::SeqCst) {
        let t_ms = (ticks as f64 * period_ms).round() as u64;
        let upto = due(script, next_script, t_ms);
        for entry in &script[next_script..upto] {
            let p = entry.target.to_payload(&chain, &cfg.workspace, gripper);
            if let Payload::JointTarget { gripper: g, .. } | Payload::PoseTarget { gripper: g, .. } = &p {
                gripper = *g;
            }
            follower.apply_target(p);
        }
        next_script = upto;
        if let Some(b) = &bridge {
            while let Some(cmd) = b.commands().try_pop() {
                match cmd {
                    LocalCommand::Target(p) => {
                        follower.apply_target(p);
                    }
                    LocalCommand::Gripper(g) => follower.set_gripper(g),
                }
            }
        }
        let now_us = if realtime { origin.elapsed().as_micros() as u64 } else { (ticks as f64 * period * 1e6) as u64 };
        let tick = follower.tick(now_us, period)?;
        let rec = tick_record(&follower, ticks, ticks as f64 * period, period, &tick);
        if let Some(w) = log.as_mut() {
            w.tick(&rec).map_err(|e| AppError::Internal(format!("writing the tick log: {e}")))?;
        }
        if let Some(b) = &bridge {
            b.publish(state_message(&follower, &rec, Some(0.0)));
        }
        last = Some(rec);
        ticks += 1;
        if realtime {
            let deadline = origin + Duration::from_secs_f64(ticks as f64 * period);
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            } else if ticks > 1 {
                max_lateness = max_lateness.max(now - deadline);
            }
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush().map_err(|e| AppError::Internal(format!("flushing the tick log: {e}")))?;
    }
    Ok(summary(&follower, ticks, last.as_ref(), max_lateness))
}

/// Master mapping used when leading from potentiometers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasterMapping {
    Joints,
    Pose,
}

/// Potentiometer master on a serial device.
pub struct MasterInput<P> {
    device: SerialDevice<P>,
    calibration: CalibrationState,
    filter: PotFilter,
    mapping: MasterMapping,
}

impl<P: io::Read + io::Write + Send> MasterInput<P> {
    pub fn new(device: SerialDevice<P>, calibration: CalibrationState, mapping: MasterMapping, smoothing: f64) -> Self {
        Self { device, calibration, filter: PotFilter::new(smoothing), mapping }
    }

    /// Polls the device and maps the newest reading, if any.
    pub fn poll(&mut self, chain: &DHChain, cfg: &AppConfig) -> Result<Option<Payload>, AppError> {
        self.device.request_state()?;
        let Some(raw) = self.device.pots() else { return Ok(None) };
        let r = self.filter.apply(&raw);
        map_reading(&self.calibration, &r, self.mapping, chain, cfg).map(Some)
    }
}

fn map_reading(
    cal: &CalibrationState,
    r: &PotReading,
    mapping: MasterMapping,
    chain: &DHChain,
    cfg: &AppConfig,
) -> Result<Payload, AppError> {
    let err = |e: master::MasterError| AppError::Calibration(e.to_string());
    Ok(match mapping {
        MasterMapping::Joints => {
            let (q, gripper) = master::map_to_joints(cal, r, chain).map_err(err)?;
            Payload::JointTarget { q: q.into_inner(), gripper }
        }
        MasterMapping::Pose => {
            let pose = master::map_to_pose(cal, r, &cfg.workspace).map_err(err)?;
            Payload::PoseTarget { r: pose.r.vec4(), t: pose.t.to_array(), gripper: 0.0 }
        }
    })
}

pub enum LeadSource {
    Script(Vec<ScriptedTarget>),
    Master(MasterMapping),
    Ui,
}

pub struct LeadOptions {
    pub source: LeadSource,
    /// After the last script entry, keep streaming this long.
    pub hold: Duration,
    /// Give up when no follower answers the Hello within this long.
    pub answer_timeout: Duration,
    pub duration: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadSummary {
    pub frames_sent: u64,
    pub follower_acknowledged: bool,
    /// Last StateReport from the follower.
    pub remote_q: Option<Vec<f64>>,
    pub remote_gripper: Option<f64>,
    pub rtt_ms: Option<f64>,
    /// Remote translation error against the last target.
    pub err_t: Option<f64>,
}

fn target_pose(chain: &DHChain, p: &Payload) -> Option<Pose> {
    match p {
        Payload::JointTarget { q, .. } => fkm(chain, q).ok(),
        Payload::PoseTarget { r, t, .. } => {
            let r = mathcore::UnitQuaternion::new(mathcore::Quaternion::from_vec4(*r)).ok()?;
            Some(Pose::new(r, mathcore::PureQuaternion::from_array(*t)))
        }
        _ => None,
    }
}

fn with_gripper(p: Payload, g: f64) -> Payload {
    match p {
        Payload::JointTarget { q, .. } => Payload::JointTarget { q, gripper: g },
        Payload::PoseTarget { r, t, .. } => Payload::PoseTarget { r, t, gripper: g },
        other => other,
    }
}

/// Leader: streams targets from a script, the potentiometer master or the UI.
pub fn run_lead(cfg: &AppConfig, lead: &LeadOptions, shutdown: Arc<AtomicBool>) -> Result<LeadSummary, AppError> {
    let chain = cfg.load_chain()?;
    cfg.validate_with(&chain)?;
    let mut master = match lead.source {
        LeadSource::Master(mapping) => {
            let cal = cfg.load_calibration()?;
            let DeviceSpec::Serial(path) = &cfg.device else {
                return Err(ConfigError::Invalid("leading from the master needs --device serial:PORT".into()).into());
            };
            let port = TtyPort::open(path).map_err(DeviceError::Io)?;
            Some(MasterInput::new(SerialDevice::new(port, format!("serial:{path}"), REPLY_TIMEOUT), cal, mapping, 0.5))
        }
        _ => None,
    };
    let bridge = start_bridge(cfg, NodeRole::Leader, &chain)?;
    if matches!(lead.source, LeadSource::Ui) && bridge.is_none() {
        return Err(ConfigError::Invalid("leading from the UI needs --ui ADDR".into()).into());
    }
    let addr = &cfg.endpoints.leader_connect;
    let faults = (!cfg.faults.is_passthrough()).then_some((cfg.faults, cfg.seed));
    let mut session =
        LeaderSession::connect(addr, faults).map_err(|e| AppError::Network(format!("connect {addr}: {e}")))?;
    announce(&format!("lead connected to {addr}"));

    let period = Duration::from_secs_f64(cfg.period());
    let origin = Instant::now();
    let mut deadline = origin;
    let mut acknowledged_at: Option<Instant> = None;
    let mut current: Option<Payload> = None;
    let mut gripper = 0.0;
    let mut next_script = 0;
    let mut frames_sent = 0u64;
    let mut last_ping = origin;
    let mut seq = 0u64;
    loop {
        if shutdown.load(Ordering::SeqCst) || lead.duration.is_some_and(|d| origin.elapsed() >= d) {
            break;
        }
        if !session.poll(Duration::ZERO) {
            return Err(AppError::Network("connection closed".into()));
        }
        if acknowledged_at.is_none() {
            if session.follower_acknowledged() {
                acknowledged_at = Some(Instant::now());
                announce("lead follower acknowledged");
            } else if origin.elapsed() > lead.answer_timeout {
                return Err(AppError::Network(format!("no follower answered within {:?}", lead.answer_timeout)));
            }
        }

        match &lead.source {
            LeadSource::Script(script) => {
                if let Some(t0) = acknowledged_at {
                    let t_ms = t0.elapsed().as_millis() as u64;
                    let upto = due(script, next_script, t_ms);
                    for entry in &script[next_script..upto] {
                        let p = entry.target.to_payload(&chain, &cfg.workspace, gripper);
                        if let Payload::JointTarget { gripper: g, .. } | Payload::PoseTarget { gripper: g, .. } = &p {
                            gripper = *g;
                        }
                        current = Some(p);
                    }
                    next_script = upto;
                    let end_ms = script.last().map_or(0, |s| s.t_ms) + lead.hold.as_millis() as u64;
                    if next_script == script.len() && t_ms >= end_ms {
                        break;
                    }
                }
            }
            LeadSource::Master(_) => {
                if let Some(m) = master.as_mut() {
                    if let Some(p) = m.poll(&chain, cfg)? {
                        current = Some(p);
                    }
                }
            }
            LeadSource::Ui => {}
        }
        if let Some(b) = &bridge {
            while let Some(cmd) = b.commands().try_pop() {
                match cmd {
                    LocalCommand::Target(p) => {
                        if let Payload::JointTarget { gripper: g, .. } | Payload::PoseTarget { gripper: g, .. } = &p {
                            gripper = *g;
                        }
                        current = Some(p);
                    }
                    LocalCommand::Gripper(g) => {
                        gripper = g;
                        current = current.take().map(|p| with_gripper(p, g));
                    }
                }
            }
        }

        if acknowledged_at.is_some() {
            if let Some(p) = &current {
                if session.send(p.clone()) {
                    frames_sent += 1;
                }
            }
            if last_ping.elapsed() >= Duration::from_secs(1) {
                session.ping();
                last_ping = Instant::now();
            }
        }
        if let (Some(b), Some(s)) = (&bridge, session.last_state()) {
            let (err_t, err_r) = remote_errors(&chain, &s.q, current.as_ref());
            b.publish(StateMessage {
                q: s.q.clone(),
                gripper: s.gripper,
                err_t,
                err_r,
                latency_ms: session.last_rtt().map(|d| d.as_secs_f64() * 1e3),
                seq,
                mode: None,
                target: current.as_ref().and_then(echo),
            });
            seq += 1;
        }

        deadline += period;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        } else if now - deadline > 10 * period {
            deadline = now;
        }
    }
    // Collect the reports still in flight.
    session.poll(Duration::from_millis(50));
    let remote = session.last_state().cloned();
    let err_t = remote.as_ref().map(|s| remote_errors(&chain, &s.q, current.as_ref()).0);
    let summary = LeadSummary {
        frames_sent,
        follower_acknowledged: session.follower_acknowledged(),
        remote_q: remote.as_ref().map(|s| s.q.clone()),
        remote_gripper: remote.map(|s| s.gripper),
        rtt_ms: session.last_rtt().map(|d| d.as_secs_f64() * 1e3),
        err_t,
    };
    session.close();
    Ok(summary)
}

fn echo(p: &Payload) -> Option<TargetEcho> {
    match p {
        Payload::JointTarget { q, .. } => Some(TargetEcho::TargetJoints { q: q.clone() }),
        Payload::PoseTarget { r, t, .. } => Some(TargetEcho::TargetPose { t: *t, r: *r }),
        _ => None,
    }
}

fn remote_errors(chain: &DHChain, q: &[f64], target: Option<&Payload>) -> (f64, f64) {
    let (Some(goal), Ok(now)) = (target.and_then(|p| target_pose(chain, p)), fkm(chain, q)) else {
        return (0.0, 0.0);
    };
    ((goal.t - now.t).norm(), rotation_error(&now.r, &goal.r).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaySummary {
    pub leader_addr: String,
    pub follower_addr: String,
    pub to_follower_frames: u64,
    pub to_leader_frames: u64,
    pub fault_dropped: u64,
    pub unpaired_dropped: u64,
    pub rejected_connections: u64,
}

pub fn run_relay(cfg: &AppConfig, opts: &RunOptions, shutdown: Arc<AtomicBool>) -> Result<RelaySummary, AppError> {
    cfg.validate()?;
    let rc = RelayConfig {
        listen_leader: cfg.endpoints.relay_leader.clone(),
        listen_follower: cfg.endpoints.relay_follower.clone(),
        faults: cfg.faults,
        seed: cfg.seed,
        ..RelayConfig::default()
    };
    let handle = telearm_link::run_relay(&rc).map_err(|e| AppError::Network(format!("relay: {e}")))?;
    announce(&format!("relay leader={} follower={}", handle.leader_addr(), handle.follower_addr()));
    let start = Instant::now();
    while !shutdown.load(Ordering::SeqCst) && opts.duration.is_none_or(|d| start.elapsed() < d) {
        thread::sleep(Duration::from_millis(20));
    }
    let s = handle.stats();
    let (to_leader, to_follower) = handle.unpaired_dropped();
    let summary = RelaySummary {
        leader_addr: handle.leader_addr().to_string(),
        follower_addr: handle.follower_addr().to_string(),
        to_follower_frames: s.to_follower.frames.load(Ordering::Relaxed),
        to_leader_frames: s.to_leader.frames.load(Ordering::Relaxed),
        fault_dropped: s.to_follower.fault_dropped.load(Ordering::Relaxed)
            + s.to_leader.fault_dropped.load(Ordering::Relaxed),
        unpaired_dropped: to_leader + to_follower,
        rejected_connections: s.rejected_connections.load(Ordering::Relaxed),
    };
    handle.shutdown();
    Ok(summary)
}

/// Where calibration samples come from.
pub enum CalibrationInput {
    Device,
    /// Text file, one reading of six counts per line.
    Samples(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub samples: u64,
    pub calibration: CalibrationState,
    pub written: PathBuf,
}

/// Parses a line of six whitespace- or comma-separated counts.
pub fn parse_counts(line: &str) -> Result<PotReading, String> {
    let values: Vec<u16> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u16>().map_err(|_| format!("`{t}` is not a count")))
        .collect::<Result<_, _>>()?;
    let counts: [u16; master::CHANNELS] =
        values.try_into().map_err(|v: Vec<u16>| format!("expected {} counts, found {}", master::CHANNELS, v.len()))?;
    PotReading::new(counts).map_err(|e| e.to_string())
}

/// Captures min/max travel of every potentiometer and writes the file.
pub fn run_calibrate(
    cfg: &AppConfig,
    input: &CalibrationInput,
    capture: Duration,
    out: &Path,
    shutdown: Arc<AtomicBool>,
) -> Result<CalibrationSummary, AppError> {
    let mut cal = CalibrationState::new();
    let mut samples = 0u64;
    match input {
        CalibrationInput::Samples(path) => {
            let file = File::open(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                let body = line.split('#').next().unwrap_or("").trim();
                if body.is_empty() {
                    continue;
                }
                let r = parse_counts(body).map_err(|message| ConfigError::Parse {
                    path: path.clone(),
                    message: format!("line {}: {message}", i + 1),
                })?;
                cal = cal.ingest(&r);
                samples += 1;
            }
        }
        CalibrationInput::Device => {
            let mut dev = match &cfg.device {
                DeviceSpec::Serial(path) => {
                    SerialDevice::new(TtyPort::open(path).map_err(DeviceError::Io)?, path.clone(), REPLY_TIMEOUT)
                }
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "calibration reads potentiometers over serial, not `{other}`"
                    ))
                    .into())
                }
            };
            announce("calibrate: move every potentiometer through its full travel");
            let start = Instant::now();
            while start.elapsed() < capture && !shutdown.load(Ordering::SeqCst) {
                if let Some(r) = dev.read_pots(Duration::from_millis(50))? {
                    cal = cal.ingest(&r);
                    samples += 1;
                }
            }
        }
    }
    if !cal.is_calibrated() {
        let missing: Vec<String> =
            (0..master::CHANNELS).filter(|&i| !cal.channels[i].is_calibrated()).map(|i| (i + 1).to_string()).collect();
        return Err(AppError::Calibration(format!(
            "{samples} samples; channels {} did not move through enough travel",
            missing.join(", ")
        )));
    }
    cal.save(out).map_err(|e| AppError::Calibration(format!("writing {}: {e}", out.display())))?;
    Ok(CalibrationSummary { samples, calibration: cal, written: out.to_path_buf() })
}

pub fn run_replay(path: &Path) -> Result<ReplayReport, AppError> {
    let (header, ticks) = read_log_file(path)?;
    Ok(replay(&header, &ticks)?)
}

/// Reads a JSONL script of timed targets, sorted by time.
pub fn load_script(path: &Path) -> Result<Vec<ScriptedTarget>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let mut out: Vec<ScriptedTarget> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let entry: ScriptedTarget = serde_json::from_str(body)
            .map_err(|e| ConfigError::Parse { path: path.into(), message: format!("line {}: {e}", i + 1) })?;
        out.push(entry);
    }
    out.sort_by_key(|s| s.t_ms);
    Ok(out)
}

/// The final joint posture a script asks for when it ends on a joint target.
pub fn script_final_joints(script: &[ScriptedTarget], chain: &DHChain) -> Option<Vec<f64>> {
    match &script.last()?.target {
        ScriptTarget::TargetJoints { q, .. } => Some(chain.clamp(q).into_inner()),
        ScriptTarget::TargetPose { .. } => None,
    }
}
