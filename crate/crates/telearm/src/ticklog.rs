//! Line-delimited JSON tick logs: one header, then one record per control
//! tick. Every line carries the schema version `v`.
//!
//! The joint reference `q_d` depends only on the controller, the start
//! posture and the sequence of modes and periods, so a log replays against
//! the simulator bit for bit whatever device produced it.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use telearm_core::{fkm, ControlMode, ControllerConfig, DHChain, ServoModel, SimRobot};
use telearm_link::{Follower, FollowerConfig};
use thiserror::Error;

use crate::config::NodeRole;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("log is empty or does not start with a header")]
    MissingHeader,
    #[error("unsupported schema version {0}")]
    Version(u32),
    #[error("replay failed: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub node: NodeRole,
    pub device: String,
    /// Chain in its text form.
    pub chain: String,
    pub controller: ControllerConfig,
    pub servo: ServoModel,
    /// Initial joint reference.
    pub q0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// Tick index from zero.
    pub k: u64,
    /// Follower clock, seconds.
    pub t: f64,
    /// Controller period used for this tick.
    pub dt: f64,
    /// Target in force; `None` while holding the start posture.
    pub target: Option<ControlMode>,
    pub gripper_target: f64,
    pub q_d: Vec<f64>,
    pub q: Vec<f64>,
    pub gripper: f64,
    pub err_t: f64,
    pub err_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Tick(TickRecord),
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Deserialize)]
struct VersionOnly {
    v: u32,
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl LogWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &LogHeader) -> io::Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W, header: &LogHeader) -> io::Result<Self> {
        let mut w = Self { out };
        w.line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    pub fn tick(&mut self, rec: &TickRecord) -> io::Result<()> {
        self.line(&Line::Tick(rec.clone()))
    }

    fn line(&mut self, l: &Line) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &Versioned { v: SCHEMA_VERSION, body: l })?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a whole log. Blank lines are skipped; anything else that does not
/// parse is reported with its 1-based line number.
pub fn read_log<R: BufRead>(input: R) -> Result<(LogHeader, Vec<TickRecord>), LogError> {
    let mut header = None;
    let mut ticks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| LogError::Line { line: line_no, message: e.to_string() };
        let version: VersionOnly = serde_json::from_str(&text).map_err(bad)?;
        if version.v != SCHEMA_VERSION {
            return Err(LogError::Version(version.v));
        }
        let parsed: Versioned<Line> = serde_json::from_str(&text).map_err(bad)?;
        match (parsed.body, header.is_some()) {
            (Line::Header(h), false) => header = Some(h),
            (Line::Header(_), true) => {
                return Err(LogError::Line { line: line_no, message: "second header".into() });
            }
            (Line::Tick(_), false) => return Err(LogError::MissingHeader),
            (Line::Tick(t), true) => ticks.push(t),
        }
    }
    Ok((header.ok_or(LogError::MissingHeader)?, ticks))
}

pub fn read_log_file(path: &Path) -> Result<(LogHeader, Vec<TickRecord>), LogError> {
    read_log(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub ticks: usize,
    /// Every replayed `q_d` equals the logged one bit for bit.
    pub identical: bool,
    pub max_q_d_diff: f64,
    /// First tick whose `q_d` differs.
    pub first_divergence: Option<u64>,
    /// Largest translation error of the replayed controller on pose ticks.
    pub max_err_t: f64,
    pub mean_err_t: f64,
    /// Simulated ‖q − q_d‖ at the end.
    pub final_tracking: f64,
    pub final_q_d: Vec<f64>,
}

/// Re-runs the logged targets against a simulated robot.
pub fn replay(header: &LogHeader, ticks: &[TickRecord]) -> Result<ReplayReport, LogError> {
    let chain: DHChain =
        header.chain.parse().map_err(|e: telearm_core::kinematics::KinematicsError| LogError::Replay(e.to_string()))?;
    let robot = SimRobot::new(chain.clone(), header.servo.clone(), &header.q0);
    let cfg = FollowerConfig { controller: header.controller, ..FollowerConfig::default() };
    let mut follower =
        Follower::new(chain.clone(), cfg, robot, &header.q0).map_err(|e| LogError::Replay(e.to_string()))?;

    let mut max_diff = 0.0f64;
    let mut first_divergence = None;
    let (mut max_err_t, mut sum_err_t, mut pose_ticks) = (0.0f64, 0.0, 0usize);
    for rec in ticks {
        if let Some(mode) = &rec.target {
            if follower.mode() != Some(mode) && !follower.set_mode(mode.clone()) {
                return Err(LogError::Replay(format!("tick {}: target rejected", rec.k)));
            }
        }
        follower.set_gripper(rec.gripper_target);
        let out = follower
            .tick((rec.t * 1e6) as u64, rec.dt)
            .map_err(|e| LogError::Replay(format!("tick {}: {e}", rec.k)))?;
        let q_d = follower.q_d();
        if q_d.len() != rec.q_d.len() {
            return Err(LogError::Replay(format!("tick {}: q_d has {} values", rec.k, rec.q_d.len())));
        }
        let same = q_d.iter().zip(&rec.q_d).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same && first_divergence.is_none() {
            first_divergence = Some(rec.k);
        }
        max_diff = max_diff.max(q_d.max_abs_diff(&rec.q_d));
        if let (Some(ControlMode::TaskSpace { .. }), Some(c)) = (follower.mode(), &out.control) {
            max_err_t = max_err_t.max(c.err_t);
            sum_err_t += c.err_t;
            pose_ticks += 1;
        }
    }
    let final_q_d = follower.q_d().to_vec();
    Ok(ReplayReport {
        ticks: ticks.len(),
        identical: first_divergence.is_none(),
        max_q_d_diff: max_diff,
        first_divergence,
        max_err_t,
        mean_err_t: if pose_ticks > 0 { sum_err_t / pose_ticks as f64 } else { 0.0 },
        final_tracking: follower.state().q.max_abs_diff(&final_q_d),
        final_q_d,
    })
}

/// End-effector translation distance between two postures.
pub fn translation_gap(chain: &DHChain, a: &[f64], b: &[f64]) -> f64 {
    match (fkm(chain, a), fkm(chain, b)) {
        (Ok(pa), Ok(pb)) => (pa.t - pb.t).norm(),
        _ => f64::NAN,
    }
}
