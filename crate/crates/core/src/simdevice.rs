//! Rate-limited servo simulation of the arm: five joint channels plus the
//! gripper channel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::kinematics::{DHChain, JointVector};
use crate::port::{DeviceError, DevicePort};

/// Default joint slew rate (rad/s), roughly a hobby servo's 0.17 s per 60°.
pub const DEFAULT_MAX_SPEED: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: JointVector,
    /// Gripper opening ratio in [0, 1].
    pub gripper: f64,
    /// Simulated time (s).
    pub t_sim: f64,
}

impl RobotState {
    pub fn at_rest(q: JointVector) -> Self {
        Self { q, gripper: 0.0, t_sim: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoModel {
    /// Per-joint slew limit (rad/s).
    pub max_speed: JointVector,
    /// Gripper slew limit (ratio/s).
    pub gripper_speed: f64,
    /// Targets closer than this (rad) do not move the joint.
    pub deadband: f64,
}

impl ServoModel {
    pub fn uniform(dof: usize, max_speed: f64) -> Self {
        Self { max_speed: JointVector::splat(dof, max_speed), gripper_speed: max_speed / PI, deadband: 0.0 }
    }
}

impl Default for ServoModel {
    fn default() -> Self {
        Self::uniform(5, DEFAULT_MAX_SPEED)
    }
}

/// Moves `current` toward `target` by at most `budget`, landing exactly on
/// the target when it is within reach.
fn approach(current: f64, target: f64, budget: f64, deadband: f64) -> f64 {
    let delta = target - current;
    if delta.abs() <= deadband {
        return current;
    }
    // Relative slack keeps accumulated rounding from costing an extra tick.
    if delta.abs() <= budget * (1.0 + 1e-12) {
        target
    } else {
        current + budget.copysign(delta)
    }
}

/// Advances the servos by `dt` toward clamped targets.
pub fn tick(
    state: &RobotState,
    target_q: &[f64],
    target_gripper: f64,
    dt: f64,
    model: &ServoModel,
    chain: &DHChain,
) -> RobotState {
    let dt = dt.max(0.0);
    let target = chain.clamp(target_q);
    let q: Vec<f64> = state
        .q
        .iter()
        .zip(target.iter())
        .zip(model.max_speed.iter())
        .map(|((&qi, &ti), &speed)| approach(qi, ti, speed * dt, model.deadband))
        .collect();
    let g_target = if target_gripper.is_finite() { target_gripper.clamp(0.0, 1.0) } else { state.gripper };
    let gripper = approach(state.gripper, g_target, model.gripper_speed * dt, 0.0).clamp(0.0, 1.0);
    RobotState { q: chain.clamp(&q), gripper, t_sim: state.t_sim + dt }
}

/// Simulated robot that owns its state.
#[derive(Debug, Clone)]
pub struct SimRobot {
    chain: DHChain,
    model: ServoModel,
    state: RobotState,
}

impl SimRobot {
    pub fn new(chain: DHChain, model: ServoModel, q0: &[f64]) -> Self {
        let state = RobotState::at_rest(chain.clamp(q0));
        Self { chain, model, state }
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn step(&mut self, target_q: &[f64], target_gripper: f64, dt: f64) -> &RobotState {
        self.state = tick(&self.state, target_q, target_gripper, dt, &self.model, &self.chain);
        &self.state
    }
}

impl DevicePort for SimRobot {
    fn exchange(&mut self, q: &[f64], gripper: f64, dt: f64) -> Result<RobotState, DeviceError> {
        if q.len() != self.chain.dof() {
            return Err(DeviceError::Protocol(format!("expected {} joints, got {}", self.chain.dof(), q.len())));
        }
        Ok(self.step(q, gripper, dt).clone())
    }

    fn name(&self) -> &str {
        "sim"
    }
}
