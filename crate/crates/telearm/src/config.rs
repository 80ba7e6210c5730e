//! Application configuration: a TOML file, then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use telearm_core::master::{CalibrationState, Workspace};
use telearm_core::{umirobot_chain, ControllerConfig, DHChain, ServoModel};
use telearm_link::{FollowerConfig, FollowerEndpoint, LinkFaults};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// What this process is. Subcommands set it; the UI handshake reports it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    #[default]
    Follower,
    Leader,
    Relay,
    Sim,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Follower => "follower",
            NodeRole::Leader => "leader",
            NodeRole::Relay => "relay",
            NodeRole::Sim => "sim",
        })
    }
}

/// Where the follower's robot lives. Written `sim`, `emulated` or
/// `serial:/dev/ttyUSB0`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DeviceSpec {
    /// In-process servo simulation.
    #[default]
    Sim,
    /// The serial protocol against an in-process firmware emulator.
    Emulated,
    Serial(String),
}

impl FromStr for DeviceSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "sim" => Ok(DeviceSpec::Sim),
            "emulated" => Ok(DeviceSpec::Emulated),
            _ => match s.strip_prefix("serial:") {
                Some(port) if !port.is_empty() => Ok(DeviceSpec::Serial(port.to_string())),
                _ => Err(ConfigError::Invalid(format!("device `{s}`: expected sim, emulated or serial:PORT"))),
            },
        }
    }
}

impl TryFrom<String> for DeviceSpec {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, ConfigError> {
        s.parse()
    }
}

impl From<DeviceSpec> for String {
    fn from(d: DeviceSpec) -> String {
        d.to_string()
    }
}

impl fmt::Display for DeviceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceSpec::Sim => f.write_str("sim"),
            DeviceSpec::Emulated => f.write_str("emulated"),
            DeviceSpec::Serial(p) => write!(f, "serial:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    /// Relay port the leader connects to.
    pub leader_connect: String,
    /// Relay port the follower connects to.
    pub follower_connect: String,
    /// When set, the follower accepts leaders here instead of connecting out.
    pub follower_listen: Option<String>,
    pub relay_leader: String,
    pub relay_follower: String,
    /// WebSocket UI bridge; off when unset.
    pub ui: Option<String>,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            leader_connect: "127.0.0.1:7001".into(),
            follower_connect: "127.0.0.1:7002".into(),
            follower_listen: None,
            relay_leader: ":7001".into(),
            relay_follower: ":7002".into(),
            ui: None,
        }
    }
}

impl Endpoints {
    pub fn follower_endpoint(&self) -> FollowerEndpoint {
        match &self.follower_listen {
            Some(l) => FollowerEndpoint::Listen(l.clone()),
            None => FollowerEndpoint::Connect(self.follower_connect.clone()),
        }
    }
}

/// Controller gains; the sampling period comes from the tick rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub limit_gain: f64,
}

impl Default for Gains {
    fn default() -> Self {
        let c = ControllerConfig::default();
        Self { alpha: c.alpha, lambda: c.lambda, eta: c.eta, limit_gain: c.limit_gain }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub role: NodeRole,
    pub tick_rate_hz: f64,
    /// StateReport rate of the follower.
    pub report_rate_hz: f64,
    /// A silent leader session may be replaced after this long.
    pub stale_after_ms: u64,
    pub device: DeviceSpec,
    /// Chain file; the built-in UMIRobot table when unset.
    pub chain: Option<PathBuf>,
    /// Potentiometer calibration file, needed to lead from pots.
    pub calibration: Option<PathBuf>,
    /// Initial joint reference.
    pub q0: Vec<f64>,
    /// Seed of the fault schedule.
    pub seed: u64,
    pub endpoints: Endpoints,
    pub gains: Gains,
    /// Applied where this process sends: the relay's leader-to-follower
    /// direction, or the outbound frames of a leader or follower.
    pub faults: LinkFaults,
    pub workspace: Workspace,
    pub servo: ServoModel,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            role: NodeRole::default(),
            tick_rate_hz: 100.0,
            report_rate_hz: 50.0,
            stale_after_ms: 2000,
            device: DeviceSpec::default(),
            chain: None,
            calibration: None,
            q0: vec![0.0; 5],
            seed: 0,
            endpoints: Endpoints::default(),
            gains: Gains::default(),
            faults: LinkFaults::none(),
            workspace: Workspace::default(),
            servo: ServoModel::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        text.parse().map_err(|e: ConfigError| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.into(), message },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is representable in TOML")
    }

    pub fn period(&self) -> f64 {
        1.0 / self.tick_rate_hz
    }

    pub fn controller(&self) -> ControllerConfig {
        let g = self.gains;
        ControllerConfig {
            alpha: g.alpha,
            lambda: g.lambda,
            eta: g.eta,
            period: self.period(),
            limit_gain: g.limit_gain,
        }
    }

    pub fn follower(&self) -> FollowerConfig {
        let every = (self.tick_rate_hz / self.report_rate_hz).round().max(1.0);
        FollowerConfig {
            controller: self.controller(),
            report_every: every as u32,
            stale_after: Duration::from_millis(self.stale_after_ms),
        }
    }

    pub fn load_chain(&self) -> Result<DHChain, ConfigError> {
        match &self.chain {
            None => Ok(umirobot_chain()),
            Some(p) => DHChain::load(p).map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() }),
        }
    }

    pub fn load_calibration(&self) -> Result<CalibrationState, ConfigError> {
        let p = self.calibration.as_ref().ok_or_else(|| {
            ConfigError::Invalid("no calibration file configured (run `telearm calibrate` first)".into())
        })?;
        CalibrationState::load(p).map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() })
    }

    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.tick_rate_hz.is_finite() && self.tick_rate_hz > 0.0) {
            return bad(format!("tick_rate_hz must be positive, got {}", self.tick_rate_hz));
        }
        if !(self.report_rate_hz.is_finite() && self.report_rate_hz > 0.0) {
            return bad(format!("report_rate_hz must be positive, got {}", self.report_rate_hz));
        }
        self.controller().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.faults.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.workspace.is_valid() {
            return bad("workspace box or angle ranges are empty, or the reference is not a unit quaternion".into());
        }
        if self.q0.iter().any(|v| !v.is_finite()) {
            return bad("q0 must be finite".into());
        }
        Ok(())
    }

    /// Validation that needs the chain: joint counts must agree.
    pub fn validate_with(&self, chain: &DHChain) -> Result<(), ConfigError> {
        self.validate()?;
        if self.q0.len() != chain.dof() {
            return Err(ConfigError::Invalid(format!(
                "q0 has {} values, the chain {} joints",
                self.q0.len(),
                chain.dof()
            )));
        }
        if self.servo.max_speed.len() != chain.dof() {
            return Err(ConfigError::Invalid(format!(
                "servo.max_speed has {} values, the chain {} joints",
                self.servo.max_speed.len(),
                chain.dof()
            )));
        }
        Ok(())
    }
}

impl FromStr for AppConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: PathBuf::from("<config>"), message: e.to_string() })
    }
}

/// Parses `a,b,c` into numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| ConfigError::Invalid(format!("`{t}` is not a number"))))
        .collect()
}
