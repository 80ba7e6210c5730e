//! Constrained task-space kinematic control and the configuration-space
//! passthrough.
//!
//! Each tick solves
//!
//! ```text
//!     u ∈ argmin_q̇  α‖J_t q̇ + η vec4(t̃)‖² + (1−α)‖J_r̃ q̇ + η vec4(r̃)‖² + λ²‖q̇‖²
//!         subject to −g(q − q_min) ⪯ q̇ ⪯ g(q_max − q)
//! ```
//!
//! and integrates `q_d ← clamp(q_d + u T)`. `t̃ = t − t_d` and `r̃` is the
//! switching rotation error. `J_r̃` is the Jacobian of `vec4(r̃)`, obtained
//! from the rotation Jacobian as `H⁻(r_d) · C · J_r` where `C` conjugates.
//! Since both factors are orthogonal, `J_r̃ᵀJ_r̃ = J_rᵀJ_r`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{conjugate_jacobian, kinematics, DHChain, JointVector, KinematicsError, Pose};
use crate::mathcore::{dot, norm, Mat, Quaternion, UnitQuaternion};
use crate::qp::{QpError, QpProblem, Solver};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    /// The joint-limit constraints always admit q̇ = 0, so this indicates a bug.
    #[error("joint-limit QP reported infeasible (q̇ = 0 is always feasible): {0}")]
    UnexpectedInfeasibility(QpError),
    #[error(transparent)]
    Qp(QpError),
}

impl From<QpError> for ControllerError {
    fn from(e: QpError) -> Self {
        match e {
            QpError::Infeasible { .. } => ControllerError::UnexpectedInfeasibility(e),
            other => ControllerError::Qp(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Translation/rotation weight in [0, 1].
    pub alpha: f64,
    /// Joint velocity damping, > 0.
    pub lambda: f64,
    /// Task error gain (1/s), > 0.
    pub eta: f64,
    /// Sampling period T (s), > 0.
    pub period: f64,
    /// Velocity damper gain on the joint-limit constraints (1/s), > 0.
    #[serde(default = "default_limit_gain")]
    pub limit_gain: f64,
}

fn default_limit_gain() -> f64 {
    1.0
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { alpha: 0.999, lambda: 0.01, eta: 4.0, period: 0.01, limit_gain: 1.0 }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad("period must be positive");
        }
        if !(self.limit_gain > 0.0 && self.limit_gain.is_finite()) {
            return bad("limit_gain must be positive");
        }
        Ok(())
    }
}

/// What the controller is asked to track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ControlMode {
    /// Joint targets, applied directly after clamping.
    ConfigurationSpace { q: JointVector },
    /// End-effector pose, resolved by the QP controller.
    TaskSpace { pose: Pose },
}

/// Switching rotation error: `r*·r_d − 1` when that is closer to zero than
/// `r*·r_d + 1`, otherwise `r*·r_d + 1`.
pub fn rotation_error(r: &UnitQuaternion, r_d: &UnitQuaternion) -> Quaternion {
    let x = r.conj().quaternion() * r_d.quaternion();
    let minus = x - Quaternion::ONE;
    let plus = x + Quaternion::ONE;
    if minus.norm() < plus.norm() {
        minus
    } else {
        plus
    }
}

/// `W = [−I; I]`, `w = g·[q − q_min; q_max − q]`.
pub fn joint_limit_constraints(q: &[f64], chain: &DHChain, limit_gain: f64) -> (Mat, Vec<f64>) {
    let n = q.len();
    let eye = Mat::identity(n);
    let w_mat = eye.scale(-1.0).vstack(&eye).expect("same column count");
    let mut w = Vec::with_capacity(2 * n);
    w.extend(q.iter().zip(chain.q_min().iter()).map(|(qi, lo)| limit_gain * (qi - lo)));
    w.extend(q.iter().zip(chain.q_max().iter()).map(|(qi, hi)| limit_gain * (hi - qi)));
    (w_mat, w)
}

/// Task-space errors at a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskError {
    /// `t − t_d`, as `vec4`.
    pub translation: [f64; 4],
    /// Switching rotation error, as `vec4`.
    pub rotation: [f64; 4],
}

impl TaskError {
    pub fn translation_norm(&self) -> f64 {
        norm(&self.translation)
    }

    pub fn rotation_norm(&self) -> f64 {
        norm(&self.rotation)
    }
}

/// The QP of one control tick plus the quantities needed to report on it.
#[derive(Debug, Clone)]
pub struct TickProblem {
    pub problem: QpProblem,
    pub error: TaskError,
    pub translation_jacobian: Mat,
    pub rotation_error_jacobian: Mat,
}

impl TickProblem {
    /// Full weighted cost of `u`, constant terms included.
    pub fn task_cost(&self, u: &[f64], cfg: &ControllerConfig) -> f64 {
        let residual = |j: &Mat, e: &[f64; 4]| {
            let ju = j.mul_vec(u);
            ju.iter().zip(e).map(|(a, b)| (a + cfg.eta * b).powi(2)).sum::<f64>()
        };
        cfg.alpha * residual(&self.translation_jacobian, &self.error.translation)
            + (1.0 - cfg.alpha) * residual(&self.rotation_error_jacobian, &self.error.rotation)
            + cfg.lambda * cfg.lambda * dot(u, u)
    }
}

pub fn assemble_qp(
    chain: &DHChain,
    q: &[f64],
    target: &Pose,
    cfg: &ControllerConfig,
) -> Result<TickProblem, ControllerError> {
    let k = kinematics(chain, q)?;
    let n = chain.dof();
    let t_err = (k.pose.t - target.t).vec4();
    let r_err = rotation_error(&k.pose.r, &target.r).vec4();

    let jt = k.translation_jacobian;
    let jre =
        target.r.quaternion().hamilton_right().matmul(&conjugate_jacobian(&k.rotation_jacobian)).expect("4x4 by 4xn");

    let a = cfg.alpha;
    let l2 = cfg.lambda * cfg.lambda;
    let jtt = jt.tr_matmul(&jt).expect("same rows");
    let jrr = jre.tr_matmul(&jre).expect("same rows");
    let mut h = Mat::zeros(n, n);
    for i in 0..n {
        for c in 0..n {
            h[(i, c)] = 2.0 * (a * jtt[(i, c)] + (1.0 - a) * jrr[(i, c)]);
        }
        h[(i, i)] += 2.0 * l2;
    }
    // Exact symmetry for the solver's check.
    for i in 0..n {
        for c in 0..i {
            let v = 0.5 * (h[(i, c)] + h[(c, i)]);
            h[(i, c)] = v;
            h[(c, i)] = v;
        }
    }
    let ft = jt.tr_mul_vec(&t_err);
    let fr = jre.tr_mul_vec(&r_err);
    let f: Vec<f64> = ft.iter().zip(&fr).map(|(x, y)| 2.0 * cfg.eta * (a * x + (1.0 - a) * y)).collect();

    let (w_mat, w) = joint_limit_constraints(q, chain, cfg.limit_gain);
    Ok(TickProblem {
        problem: QpProblem::new(h, f, w_mat, w),
        error: TaskError { translation: t_err, rotation: r_err },
        translation_jacobian: jt,
        rotation_error_jacobian: jre,
    })
}

/// One cold-started task-space velocity; `q` is clamped to the limits first.
pub fn compute_velocity(
    chain: &DHChain,
    q: &[f64],
    target: &Pose,
    cfg: &ControllerConfig,
) -> Result<JointVector, ControllerError> {
    chain.check_dim(q)?;
    let q = chain.clamp(q);
    let tick = assemble_qp(chain, &q, target, cfg)?;
    Ok(Solver::new().solve(&tick.problem)?.x.into())
}

/// `q_d + u T`, clamped to the chain limits.
pub fn integrate(q_d: &[f64], u: &[f64], period: f64, chain: &DHChain) -> JointVector {
    let next: Vec<f64> = q_d.iter().zip(u).map(|(q, v)| q + v * period).collect();
    chain.clamp(&next)
}

/// Configuration-space mode: the target, clamped.
pub fn step_configuration_mode(target: &[f64], chain: &DHChain) -> JointVector {
    chain.clamp(target)
}

/// Result of one controller tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub q_d: JointVector,
    pub u: JointVector,
    pub err_t: f64,
    pub err_r: f64,
    pub active_set: usize,
}

/// Owns the integrated joint reference `q_d` and the solver warm-start state.
#[derive(Debug, Clone)]
pub struct KinematicController {
    chain: DHChain,
    cfg: ControllerConfig,
    solver: Solver,
    q_d: JointVector,
}

impl KinematicController {
    pub fn new(chain: DHChain, cfg: ControllerConfig, q0: &[f64]) -> Result<Self, ControllerError> {
        cfg.validate()?;
        chain.check_dim(q0)?;
        let q_d = chain.clamp(q0);
        Ok(Self { chain, cfg, solver: Solver::new(), q_d })
    }

    pub fn chain(&self) -> &DHChain {
        &self.chain
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn q_d(&self) -> &JointVector {
        &self.q_d
    }

    pub fn reset(&mut self, q: &[f64]) {
        self.q_d = self.chain.clamp(q);
    }

    /// Advances one tick of length `period` (s).
    pub fn step(&mut self, mode: &ControlMode, period: f64) -> Result<TickOutput, ControllerError> {
        match mode {
            ControlMode::ConfigurationSpace { q } => {
                self.chain.check_dim(q)?;
                let next = step_configuration_mode(q, &self.chain);
                let u: Vec<f64> = next.iter().zip(self.q_d.iter()).map(|(a, b)| (a - b) / period).collect();
                self.q_d = next;
                Ok(TickOutput { q_d: self.q_d.clone(), u: u.into(), err_t: 0.0, err_r: 0.0, active_set: 0 })
            }
            ControlMode::TaskSpace { pose } => {
                let tick = assemble_qp(&self.chain, &self.q_d, pose, &self.cfg)?;
                let sol = self.solver.solve(&tick.problem)?;
                self.q_d = integrate(&self.q_d, &sol.x, period, &self.chain);
                Ok(TickOutput {
                    q_d: self.q_d.clone(),
                    u: sol.x.into(),
                    err_t: tick.error.translation_norm(),
                    err_r: tick.error.rotation_norm(),
                    active_set: sol.active_set.len(),
                })
            }
        }
    }
}

/// Outcome of driving the controller toward a fixed pose target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRun {
    /// First step after which ‖t̃‖ fell below the tolerance.
    pub steps_to_tolerance: Option<usize>,
    pub final_err_t: f64,
    pub final_err_r: f64,
    /// Largest excursion of `q_d` beyond the joint limits.
    pub max_limit_violation: f64,
    /// Largest increase of ‖t̃‖ between consecutive steps after the first.
    pub max_error_increase: f64,
    pub q_final: JointVector,
}

/// Runs `steps` ticks of fixed length `cfg.period` from `q0` toward `target`.
pub fn run_to_target(
    chain: &DHChain,
    cfg: &ControllerConfig,
    q0: &[f64],
    target: &Pose,
    steps: usize,
    tolerance: f64,
) -> Result<ConvergenceRun, ControllerError> {
    let mut ctl = KinematicController::new(chain.clone(), *cfg, q0)?;
    let mode = ControlMode::TaskSpace { pose: *target };
    let mut run = ConvergenceRun {
        steps_to_tolerance: None,
        final_err_t: f64::INFINITY,
        final_err_r: f64::INFINITY,
        max_limit_violation: 0.0,
        max_error_increase: 0.0,
        q_final: ctl.q_d().clone(),
    };
    let mut prev_err: Option<f64> = None;
    for step in 0..steps {
        let out = ctl.step(&mode, cfg.period)?;
        // `out.err_t` is measured before integrating, so it belongs to step `step`.
        if let Some(prev) = prev_err {
            if step >= 2 {
                run.max_error_increase = run.max_error_increase.max(out.err_t - prev);
            }
        }
        prev_err = Some(out.err_t);
        for (i, q) in out.q_d.iter().enumerate() {
            let v = (chain.q_min()[i] - q).max(q - chain.q_max()[i]).max(0.0);
            run.max_limit_violation = run.max_limit_violation.max(v);
        }
        if run.steps_to_tolerance.is_none() && out.err_t < tolerance {
            run.steps_to_tolerance = Some(step);
        }
    }
    let k = kinematics(chain, ctl.q_d())?;
    run.final_err_t = (k.pose.t - target.t).norm();
    run.final_err_r = rotation_error(&k.pose.r, &target.r).norm();
    run.q_final = ctl.q_d().clone();
    Ok(run)
}
