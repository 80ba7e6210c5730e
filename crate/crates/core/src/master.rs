//! Potentiometer master: automatic min/max calibration and the two mappings,
//! joint space (one pot per joint plus the gripper) and task space (three
//! linear pots for translation, three rotary pots for roll/pitch/yaw).

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{DHChain, JointVector, Pose};
use crate::mathcore::{PureQuaternion, Quaternion, UnitQuaternion};

pub const CHANNELS: usize = 6;
/// Largest 10-bit ADC count.
pub const ADC_MAX: u16 = 1023;
/// Minimum travel (counts) for a channel to count as calibrated.
pub const CALIBRATION_MIN_SPAN: u16 = 32;

#[derive(Debug, Error)]
pub enum MasterError {
    #[error("channel {channel}: count {count} exceeds {ADC_MAX}")]
    OutOfRange { channel: usize, count: u16 },
    #[error("channel {0} is not calibrated")]
    Uncalibrated(usize),
    #[error("master mapping needs {CHANNELS} channels but the chain has {0} joints")]
    ChainSize(usize),
    #[error("calibration file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sample of the six potentiometers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotReading([u16; CHANNELS]);

impl PotReading {
    pub fn new(counts: [u16; CHANNELS]) -> Result<Self, MasterError> {
        if let Some((channel, &count)) = counts.iter().enumerate().find(|(_, &c)| c > ADC_MAX) {
            return Err(MasterError::OutOfRange { channel, count });
        }
        Ok(Self(counts))
    }

    pub fn counts(&self) -> [u16; CHANNELS] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min_seen: Option<u16>,
    pub max_seen: Option<u16>,
}

impl ChannelRange {
    pub fn span(&self) -> Option<u16> {
        Some(self.max_seen? - self.min_seen?)
    }

    pub fn is_calibrated(&self) -> bool {
        self.span().is_some_and(|s| s >= CALIBRATION_MIN_SPAN)
    }

    /// Position of `count` within the seen range, clamped to [0, 1].
    fn fraction(&self, count: u16) -> Option<f64> {
        let (lo, hi) = (self.min_seen?, self.max_seen?);
        if hi - lo < CALIBRATION_MIN_SPAN {
            return None;
        }
        let f = (f64::from(count) - f64::from(lo)) / f64::from(hi - lo);
        Some(f.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub channels: [ChannelRange; CHANNELS],
}

impl CalibrationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Widens each channel's seen range to include `r`.
    pub fn ingest(&self, r: &PotReading) -> Self {
        let mut next = *self;
        for (ch, &c) in next.channels.iter_mut().zip(r.0.iter()) {
            ch.min_seen = Some(ch.min_seen.map_or(c, |m| m.min(c)));
            ch.max_seen = Some(ch.max_seen.map_or(c, |m| m.max(c)));
        }
        next
    }

    /// Validates raw counts before ingesting them.
    pub fn ingest_counts(&self, counts: [u16; CHANNELS]) -> Result<Self, MasterError> {
        Ok(self.ingest(&PotReading::new(counts)?))
    }

    pub fn is_calibrated(&self) -> bool {
        self.channels.iter().all(ChannelRange::is_calibrated)
    }

    fn fractions(&self, r: &PotReading) -> Result<[f64; CHANNELS], MasterError> {
        let mut out = [0.0; CHANNELS];
        for (i, (ch, &c)) in self.channels.iter().zip(r.0.iter()).enumerate() {
            out[i] = ch.fraction(c).ok_or(MasterError::Uncalibrated(i))?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MasterError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MasterError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    /// One `channel min max` line per channel; `-` marks an unseen value.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("# channel min max\n");
        for (i, ch) in self.channels.iter().enumerate() {
            let fmt = |v: Option<u16>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
            let _ = writeln!(out, "{i} {} {}", fmt(ch.min_seen), fmt(ch.max_seen));
        }
        out
    }
}

impl FromStr for CalibrationState {
    type Err = MasterError;

    fn from_str(text: &str) -> Result<Self, MasterError> {
        let mut cal = CalibrationState::default();
        let mut seen = [false; CHANNELS];
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| MasterError::Parse { line: idx + 1, message: message.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err("expected `channel min max`"));
            }
            let ch: usize = fields[0].parse().map_err(|_| err("bad channel index"))?;
            if ch >= CHANNELS {
                return Err(err("channel index out of range"));
            }
            let value = |s: &str| -> Result<Option<u16>, MasterError> {
                if s == "-" {
                    return Ok(None);
                }
                let v: u16 = s.parse().map_err(|_| err("bad count"))?;
                if v > ADC_MAX {
                    return Err(err("count exceeds 1023"));
                }
                Ok(Some(v))
            };
            let (lo, hi) = (value(fields[1])?, value(fields[2])?);
            if lo.is_some() != hi.is_some() || matches!((lo, hi), (Some(a), Some(b)) if a > b) {
                return Err(err("min and max are inconsistent"));
            }
            cal.channels[ch] = ChannelRange { min_seen: lo, max_seen: hi };
            seen[ch] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(MasterError::Parse { line: 0, message: format!("channel {missing} missing") });
        }
        Ok(cal)
    }
}

/// Maps channels 1–5 onto the joint ranges and channel 6 onto the gripper.
pub fn map_to_joints(
    cal: &CalibrationState,
    r: &PotReading,
    chain: &DHChain,
) -> Result<(JointVector, f64), MasterError> {
    if chain.dof() != CHANNELS - 1 {
        return Err(MasterError::ChainSize(chain.dof()));
    }
    let f = cal.fractions(r)?;
    let q: Vec<f64> = (0..chain.dof()).map(|i| lerp(chain.q_min()[i], chain.q_max()[i], f[i])).collect();
    Ok((chain.clamp(&q), f[CHANNELS - 1]))
}

/// Task-space target ranges for the master.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    /// Lower corner of the translation box (m).
    pub min: [f64; 3],
    /// Upper corner of the translation box (m).
    pub max: [f64; 3],
    /// Roll, pitch and yaw ranges (rad), each `[lo, hi]`.
    pub angles: [[f64; 2]; 3],
    /// Orientation at zero roll, pitch and yaw, `[w, x, y, z]`; the angles
    /// rotate it about the base axes.
    #[serde(default = "home_orientation")]
    pub reference: [f64; 4],
}

/// End-effector orientation of the UMIRobot at `q = 0`.
fn home_orientation() -> [f64; 4] {
    [0.0, FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2]
}

impl Default for Workspace {
    /// A box in front of the base inside the arm's reach, ±π/2 on each angle.
    fn default() -> Self {
        Self {
            min: [0.04, -0.15, -0.05],
            max: [0.22, 0.15, 0.2],
            angles: [[-FRAC_PI_2, FRAC_PI_2]; 3],
            reference: home_orientation(),
        }
    }
}

impl Workspace {
    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| lerp(self.min[i], self.max[i], 0.5))
    }

    pub fn clamp_translation(&self, t: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| {
            let v = if t[i].is_finite() { t[i] } else { 0.5 * (self.min[i] + self.max[i]) };
            v.clamp(self.min[i], self.max[i])
        })
    }

    pub fn clamp_angles(&self, rpy: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| {
            let [lo, hi] = self.angles[i];
            let v = if rpy[i].is_finite() { rpy[i] } else { 0.0 };
            v.clamp(lo, hi)
        })
    }

    /// Clamps translation and angles, composing the rotation z-y-x.
    pub fn pose(&self, t: [f64; 3], rpy: [f64; 3]) -> Pose {
        let t = self.clamp_translation(t);
        let [roll, pitch, yaw] = self.clamp_angles(rpy);
        let reference = UnitQuaternion::new(Quaternion::from_vec4(self.reference)).unwrap_or(UnitQuaternion::IDENTITY);
        Pose::new(UnitQuaternion::from_rpy(roll, pitch, yaw).compose(&reference), PureQuaternion::from_array(t))
    }

    pub fn is_valid(&self) -> bool {
        let unit = Quaternion::from_vec4(self.reference).norm();
        (0..3).all(|i| self.min[i] < self.max[i] && self.angles[i][0] < self.angles[i][1])
            && (unit - 1.0).abs() <= crate::mathcore::RENORMALIZE_TOLERANCE
    }
}

/// Channels 1–3 → translation over the workspace box, channels 4–6 → roll,
/// pitch, yaw over the configured ranges.
pub fn map_to_pose(cal: &CalibrationState, r: &PotReading, ws: &Workspace) -> Result<Pose, MasterError> {
    let f = cal.fractions(r)?;
    let t = [0, 1, 2].map(|i| lerp(ws.min[i], ws.max[i], f[i]));
    let rpy = [0, 1, 2].map(|i| lerp(ws.angles[i][0], ws.angles[i][1], f[3 + i]));
    Ok(ws.pose(t, rpy))
}

fn lerp(lo: f64, hi: f64, f: f64) -> f64 {
    if f <= 0.0 {
        lo
    } else if f >= 1.0 {
        hi
    } else {
        lo + (hi - lo) * f
    }
}

/// Optional exponential smoothing of raw counts; `factor` 0 disables it.
#[derive(Debug, Clone, Default)]
pub struct PotFilter {
    factor: f64,
    state: Option<[f64; CHANNELS]>,
}

impl PotFilter {
    pub fn new(factor: f64) -> Self {
        Self { factor: factor.clamp(0.0, 0.999), state: None }
    }

    pub fn apply(&mut self, r: &PotReading) -> PotReading {
        if self.factor == 0.0 {
            return *r;
        }
        let raw = r.0.map(f64::from);
        let next = match self.state {
            None => raw,
            Some(prev) => [0, 1, 2, 3, 4, 5].map(|i| self.factor * prev[i] + (1.0 - self.factor) * raw[i]),
        };
        self.state = Some(next);
        PotReading(next.map(|v| v.round().clamp(0.0, f64::from(ADC_MAX)) as u16))
    }
}
