//! Denavit–Hartenberg chain model, forward kinematics and the 4×n
//! translation and rotation Jacobians.
//!
//! Each link uses the standard (distal) convention
//! `RotZ(θ) · TransZ(d) · TransX(a) · RotX(α)` with `θ = q_i + θ_off`.
//! Rotations are unit quaternions and translations pure quaternions, so the
//! Jacobians map joint velocities to `vec4(ṙ)` and `vec4(ṫ)`.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::ops::{Deref, DerefMut};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathcore::{Mat, PureQuaternion, Quaternion, UnitQuaternion};

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid joint limits: {0}")]
    InvalidLimits(String),
    #[error("non-finite DH parameter in row {0}")]
    NonFinite(usize),
    #[error("chain file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Joint positions (rad) or velocities (rad/s).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn splat(n: usize, v: f64) -> Self {
        Self(vec![v; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.iter().zip(other).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Deref for JointVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl<const N: usize> From<[f64; N]> for JointVector {
    fn from(v: [f64; N]) -> Self {
        Self(v.to_vec())
    }
}

impl From<&[f64]> for JointVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DHRow {
    /// Joint angle offset (rad).
    pub theta_off: f64,
    /// Offset along the previous z axis (m).
    pub d: f64,
    /// Length along the new x axis (m).
    pub a: f64,
    /// Twist about the new x axis (rad).
    pub alpha: f64,
}

impl DHRow {
    pub const fn new(theta_off: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self { theta_off, d, a, alpha }
    }

    fn is_finite(&self) -> bool {
        self.theta_off.is_finite() && self.d.is_finite() && self.a.is_finite() && self.alpha.is_finite()
    }

    /// Rotation and translation of this link for joint value `q`.
    fn link(&self, q: f64) -> (UnitQuaternion, PureQuaternion) {
        let theta = q + self.theta_off;
        let (s, c) = theta.sin_cos();
        let r = UnitQuaternion::rot_z(theta).compose(&UnitQuaternion::rot_x(self.alpha));
        (r, PureQuaternion::new(self.a * c, self.a * s, self.d))
    }
}

/// Serial chain of revolute joints with per-joint position limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DHChain {
    rows: Vec<DHRow>,
    q_min: JointVector,
    q_max: JointVector,
}

impl DHChain {
    pub fn new(rows: Vec<DHRow>, q_min: JointVector, q_max: JointVector) -> Result<Self, KinematicsError> {
        let n = rows.len();
        if q_min.len() != n || q_max.len() != n {
            return Err(KinematicsError::InvalidLimits(format!(
                "{} rows but {} lower and {} upper limits",
                n,
                q_min.len(),
                q_max.len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| !r.is_finite()) {
            return Err(KinematicsError::NonFinite(i));
        }
        for i in 0..n {
            if q_min[i].partial_cmp(&q_max[i]) != Some(std::cmp::Ordering::Less) {
                return Err(KinematicsError::InvalidLimits(format!(
                    "joint {i}: lower {} is not below upper {}",
                    q_min[i], q_max[i]
                )));
            }
        }
        Ok(Self { rows, q_min, q_max })
    }

    /// Chain with the same symmetric limit on every joint.
    pub fn with_symmetric_limits(rows: Vec<DHRow>, limit: f64) -> Result<Self, KinematicsError> {
        let n = rows.len();
        Self::new(rows, JointVector::splat(n, -limit), JointVector::splat(n, limit))
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[DHRow] {
        &self.rows
    }

    pub fn q_min(&self) -> &JointVector {
        &self.q_min
    }

    pub fn q_max(&self) -> &JointVector {
        &self.q_max
    }

    /// Elementwise clamp to the joint limits. Non-finite entries map to zero
    /// clamped into range.
    pub fn clamp(&self, q: &[f64]) -> JointVector {
        q.iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = if v.is_finite() { v } else { 0.0 };
                v.clamp(self.q_min[i], self.q_max[i])
            })
            .collect::<Vec<_>>()
            .into()
    }

    pub fn within_limits(&self, q: &[f64], tol: f64) -> bool {
        q.len() == self.dof()
            && q.iter().enumerate().all(|(i, v)| *v >= self.q_min[i] - tol && *v <= self.q_max[i] + tol)
    }

    pub fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), found: q.len() });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KinematicsError> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }

    /// Plain-text form: one `theta_off d a alpha` row per line followed by
    /// a `limits` line holding all lower limits then all upper limits.
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# theta_off d a alpha\n");
        for r in &self.rows {
            let _ = writeln!(out, "{} {} {} {}", r.theta_off, r.d, r.a, r.alpha);
        }
        out.push_str("limits");
        for v in self.q_min.iter().chain(self.q_max.iter()) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
        out
    }
}

impl FromStr for DHChain {
    type Err = KinematicsError;

    fn from_str(text: &str) -> Result<Self, KinematicsError> {
        let mut rows = Vec::new();
        let mut limits: Option<(usize, Vec<f64>)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| KinematicsError::Parse { line: line_no, message };
            if limits.is_some() {
                return Err(parse_err("content after the limits line".into()));
            }
            let mut tokens = line.split_whitespace().peekable();
            if tokens.peek() == Some(&"limits") {
                tokens.next();
                let values = tokens.map(parse_number).collect::<Result<Vec<_>, _>>().map_err(parse_err)?;
                limits = Some((line_no, values));
                continue;
            }
            let values = tokens.map(parse_number).collect::<Result<Vec<_>, _>>().map_err(parse_err)?;
            if values.len() != 4 {
                return Err(parse_err(format!("expected 4 values, found {}", values.len())));
            }
            rows.push(DHRow::new(values[0], values[1], values[2], values[3]));
        }
        let n = rows.len();
        let (line, values) = limits.ok_or(KinematicsError::Parse {
            line: text.lines().count(),
            message: "missing trailing limits line".into(),
        })?;
        let (lo, hi) = match values.len() {
            2 => (JointVector::splat(n, values[0]), JointVector::splat(n, values[1])),
            k if k == 2 * n => (values[..n].into(), values[n..].into()),
            k => {
                return Err(KinematicsError::Parse {
                    line,
                    message: format!("limits needs 2 or {} values, found {k}", 2 * n),
                })
            }
        };
        DHChain::new(rows, lo, hi)
    }
}

/// Parses a real number, also accepting `pi`, `-pi/2`, `3*pi/4` style tokens.
fn parse_number(tok: &str) -> Result<f64, String> {
    let bad = || format!("invalid number `{tok}`");
    if !tok.contains("pi") {
        return tok.parse::<f64>().map_err(|_| bad());
    }
    let (sign, body) = match tok.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, tok),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| bad())?),
        None => (body, 1.0),
    };
    let factor = match num {
        "pi" => 1.0,
        _ => num.strip_suffix("*pi").ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?,
    };
    Ok(sign * factor * std::f64::consts::PI / den)
}

/// The UMIRobot: five revolute joints, each limited to ±π/2.
pub fn umirobot_chain() -> DHChain {
    use std::f64::consts::PI;
    let rows = vec![
        DHRow::new(0.0, 0.00245, 0.0, -FRAC_PI_2),
        DHRow::new(-FRAC_PI_2, 0.0, 0.0813, PI),
        DHRow::new(0.0, 0.0, 0.0, FRAC_PI_2),
        DHRow::new(0.0, 0.16519, 0.0, -FRAC_PI_2),
        DHRow::new(0.0, 0.0, 0.0, FRAC_PI_2),
    ];
    DHChain::with_symmetric_limits(rows, FRAC_PI_2).expect("UMIRobot table is well formed")
}

/// End-effector pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub r: UnitQuaternion,
    pub t: PureQuaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { r: UnitQuaternion::IDENTITY, t: PureQuaternion::ZERO };

    pub fn new(r: UnitQuaternion, t: PureQuaternion) -> Self {
        Self { r, t }
    }
}

/// Pose plus both Jacobians, evaluated in one pass over the chain.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub pose: Pose,
    pub rotation_jacobian: Mat,
    pub translation_jacobian: Mat,
}

pub fn fkm(chain: &DHChain, q: &[f64]) -> Result<Pose, KinematicsError> {
    chain.check_dim(q)?;
    let mut r = UnitQuaternion::IDENTITY;
    let mut t = PureQuaternion::ZERO;
    for (row, &qi) in chain.rows.iter().zip(q) {
        let (lr, lt) = row.link(qi);
        t = t + r.rotate(&lt);
        r = r.compose(&lr);
    }
    Ok(Pose { r: r.renormalize(), t })
}

pub fn rotation_jacobian(chain: &DHChain, q: &[f64]) -> Result<Mat, KinematicsError> {
    Ok(kinematics(chain, q)?.rotation_jacobian)
}

pub fn translation_jacobian(chain: &DHChain, q: &[f64]) -> Result<Mat, KinematicsError> {
    Ok(kinematics(chain, q)?.translation_jacobian)
}

/// Joint `i` rotates about the z axis of frame `i-1`. With that axis `z_i`
/// and origin `p_i` expressed in the base frame:
/// `∂r/∂q_i = ½ z_i · r` and `∂t/∂q_i = z_i × (t − p_i)`.
pub fn kinematics(chain: &DHChain, q: &[f64]) -> Result<Kinematics, KinematicsError> {
    chain.check_dim(q)?;
    let n = chain.dof();
    let mut axes = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    let mut r = UnitQuaternion::IDENTITY;
    let mut t = PureQuaternion::ZERO;
    for (row, &qi) in chain.rows.iter().zip(q) {
        axes.push(r.rotate(&PureQuaternion::new(0.0, 0.0, 1.0)));
        origins.push(t);
        let (lr, lt) = row.link(qi);
        t = t + r.rotate(&lt);
        r = r.compose(&lr);
    }
    let r = r.renormalize();

    let mut jr = Mat::zeros(4, n);
    let mut jt = Mat::zeros(4, n);
    for (i, (z, p)) in axes.iter().zip(&origins).enumerate() {
        let dr = (z.as_quaternion() * r.quaternion()).scale(0.5);
        jr.set_column(i, &dr.vec4());
        jt.set_column(i, &z.cross(&(t - *p)).vec4());
    }
    Ok(Kinematics { pose: Pose { r, t }, rotation_jacobian: jr, translation_jacobian: jt })
}

/// Applies `Quaternion` conjugation to the rows of a 4×n Jacobian, i.e. the
/// Jacobian of `vec4(conj(x))` given the Jacobian of `vec4(x)`.
pub fn conjugate_jacobian(j: &Mat) -> Mat {
    let mut out = j.clone();
    for row in 1..4 {
        for c in 0..j.cols() {
            out[(row, c)] = -out[(row, c)];
        }
    }
    out
}

/// `true` when `a` and `b` describe the same rotation up to the quaternion sign.
pub fn same_rotation(a: &UnitQuaternion, b: &UnitQuaternion, tol: f64) -> bool {
    let (qa, qb): (Quaternion, Quaternion) = ((*a).into(), (*b).into());
    qa.max_abs_diff(&qb) < tol || qa.max_abs_diff(&-qb) < tol
}
