//! Follower side of a session, free of I/O: frames and clock ticks go in,
//! reply frames come out.

use std::time::Duration;

use telearm_core::controller::{ControllerError, TickOutput};
use telearm_core::{
    ControlMode, ControllerConfig, DHChain, DeviceError, DevicePort, JointVector, KinematicController, Pose,
    PureQuaternion, Quaternion, RobotState, UnitQuaternion,
};
use thiserror::Error;

use crate::frame::{Payload, Role, TeleopFrame, PROTO_VERSION};

#[derive(Debug, Error)]
pub enum FollowerError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerConfig {
    pub controller: ControllerConfig,
    /// A StateReport goes out every this many ticks.
    pub report_every: u32,
    /// A session with no frames for this long may be replaced by a new Hello.
    pub stale_after: Duration,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self { controller: ControllerConfig::default(), report_every: 2, stale_after: Duration::from_secs(2) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FollowerStats {
    pub sessions: u64,
    pub refused_hellos: u64,
    pub duplicate_seq: u64,
    pub without_session: u64,
    pub invalid_targets: u64,
    pub targets: u64,
    pub pings: u64,
}

#[derive(Debug, Clone, Copy)]
struct Session {
    last_seq: u32,
    last_rx_us: u64,
}

/// One control tick's outcome.
#[derive(Debug, Clone)]
pub struct FollowerTick {
    pub state: RobotState,
    pub control: Option<TickOutput>,
    pub report: Option<TeleopFrame>,
}

pub struct Follower<D> {
    cfg: FollowerConfig,
    controller: KinematicController,
    device: D,
    mode: Option<ControlMode>,
    gripper: f64,
    state: RobotState,
    session: Option<Session>,
    out_seq: u32,
    ticks: u64,
    stats: FollowerStats,
}

impl<D: DevicePort> Follower<D> {
    /// Reads the device's current pose by commanding `q0` for zero time.
    pub fn new(chain: DHChain, cfg: FollowerConfig, mut device: D, q0: &[f64]) -> Result<Self, FollowerError> {
        let controller = KinematicController::new(chain, cfg.controller, q0)?;
        let state = device.exchange(controller.q_d(), 0.0, 0.0)?;
        let gripper = state.gripper;
        Ok(Self {
            cfg,
            controller,
            device,
            mode: None,
            gripper,
            state,
            session: None,
            out_seq: 0,
            ticks: 0,
            stats: FollowerStats::default(),
        })
    }

    pub fn chain(&self) -> &DHChain {
        self.controller.chain()
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn q_d(&self) -> &JointVector {
        self.controller.q_d()
    }

    pub fn mode(&self) -> Option<&ControlMode> {
        self.mode.as_ref()
    }

    pub fn gripper_target(&self) -> f64 {
        self.gripper
    }

    pub fn stats(&self) -> FollowerStats {
        self.stats
    }

    pub fn has_session(&self) -> bool {
        self.session.is_some()
    }

    /// Follower clock (µs) at the last frame accepted from the session.
    pub fn last_rx_us(&self) -> Option<u64> {
        self.session.map(|s| s.last_rx_us)
    }

    pub fn device_mut(&mut self) -> &mut D {
        &mut self.device
    }

    fn frame(&mut self, now_us: u64, payload: Payload) -> TeleopFrame {
        let f = TeleopFrame { seq: self.out_seq, t_send_us: now_us, payload };
        self.out_seq = self.out_seq.wrapping_add(1);
        f
    }

    fn is_stale(&self, s: &Session, now_us: u64) -> bool {
        now_us.saturating_sub(s.last_rx_us) >= self.cfg.stale_after.as_micros() as u64
    }

    /// Processes one frame from the network and returns the replies.
    pub fn handle(&mut self, frame: TeleopFrame, now_us: u64) -> Vec<TeleopFrame> {
        if let Payload::Hello { role, proto_version } = frame.payload {
            let replaceable = self.session.as_ref().is_none_or(|s| self.is_stale(s, now_us));
            if role != Role::Leader || proto_version != PROTO_VERSION || !replaceable {
                self.stats.refused_hellos += 1;
                return Vec::new();
            }
            self.session = Some(Session { last_seq: frame.seq, last_rx_us: now_us });
            self.stats.sessions += 1;
            return vec![self.frame(now_us, Payload::Hello { role: Role::Follower, proto_version: PROTO_VERSION })];
        }
        let Some(session) = self.session.as_mut() else {
            self.stats.without_session += 1;
            return Vec::new();
        };
        if frame.seq <= session.last_seq {
            self.stats.duplicate_seq += 1;
            return Vec::new();
        }
        session.last_seq = frame.seq;
        session.last_rx_us = now_us;
        match frame.payload {
            Payload::Ping { nonce } => {
                self.stats.pings += 1;
                vec![self.frame(now_us, Payload::Pong { nonce })]
            }
            target @ (Payload::JointTarget { .. } | Payload::PoseTarget { .. }) => {
                if self.apply_target(target) {
                    self.stats.targets += 1;
                } else {
                    self.stats.invalid_targets += 1;
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Applies a target that did not come over the network (a local UI).
    /// Returns `false` when it is malformed.
    pub fn apply_target(&mut self, target: Payload) -> bool {
        let (mode, gripper) = match target {
            Payload::JointTarget { q, gripper } => (ControlMode::ConfigurationSpace { q: q.into() }, gripper),
            Payload::PoseTarget { r, t, gripper } => {
                let Ok(r) = UnitQuaternion::new(Quaternion::from_vec4(r)) else {
                    return false;
                };
                (ControlMode::TaskSpace { pose: Pose::new(r, PureQuaternion::from_array(t)) }, gripper)
            }
            _ => return false,
        };
        if !self.set_mode(mode) {
            return false;
        }
        self.set_gripper(gripper);
        true
    }

    /// Replaces the tracked target. Returns `false`, keeping the old one,
    /// when the joint count is wrong or a value is not finite.
    pub fn set_mode(&mut self, mode: ControlMode) -> bool {
        let ok = match &mode {
            ControlMode::ConfigurationSpace { q } => q.len() == self.chain().dof() && q.iter().all(|v| v.is_finite()),
            ControlMode::TaskSpace { pose } => {
                pose.t.to_array().iter().all(|v| v.is_finite()) && pose.r.vec4().iter().all(|v| v.is_finite())
            }
        };
        if ok {
            self.mode = Some(mode);
        }
        ok
    }

    pub fn set_gripper(&mut self, g: f64) {
        if g.is_finite() {
            self.gripper = g.clamp(0.0, 1.0);
        }
    }

    /// One control period: controller, then device. Without a target the
    /// reference is held.
    pub fn tick(&mut self, now_us: u64, period: f64) -> Result<FollowerTick, FollowerError> {
        let control = match &self.mode {
            Some(mode) => Some(self.controller.step(mode, period)?),
            None => None,
        };
        self.state = self.device.exchange(self.controller.q_d(), self.gripper, period)?;
        self.ticks += 1;
        let report = self.ticks.is_multiple_of(u64::from(self.cfg.report_every.max(1))).then(|| {
            let payload = Payload::StateReport { q: self.state.q.0.clone(), gripper: self.state.gripper };
            self.frame(now_us, payload)
        });
        Ok(FollowerTick { state: self.state.clone(), control, report })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use telearm_core::{umirobot_chain, ServoModel, SimRobot};

    fn follower() -> Follower<SimRobot> {
        let chain = umirobot_chain();
        let sim = SimRobot::new(chain.clone(), ServoModel::default(), &[0.0; 5]);
        Follower::new(chain, FollowerConfig::default(), sim, &[0.0; 5]).unwrap()
    }

    fn f(seq: u32, payload: Payload) -> TeleopFrame {
        TeleopFrame { seq, t_send_us: 0, payload }
    }

    fn hello(seq: u32) -> TeleopFrame {
        f(seq, Payload::Hello { role: Role::Leader, proto_version: PROTO_VERSION })
    }

    #[test]
    fn hello_opens_a_session_and_is_answered() {
        let mut fl = follower();
        let out = fl.handle(hello(0), 0);
        assert!(matches!(out[0].payload, Payload::Hello { role: Role::Follower, proto_version: 1 }));
        assert!(fl.has_session());
    }

    #[test]
    fn version_mismatch_is_refused() {
        let mut fl = follower();
        assert!(fl.handle(f(0, Payload::Hello { role: Role::Leader, proto_version: 2 }), 0).is_empty());
        assert!(fl.handle(f(0, Payload::Hello { role: Role::Follower, proto_version: 1 }), 0).is_empty());
        assert_eq!(fl.stats().refused_hellos, 2);
        assert!(!fl.has_session());
    }

    #[test]
    fn live_session_is_kept_until_stale() {
        let mut fl = follower();
        fl.handle(hello(0), 0);
        assert!(fl.handle(hello(0), 1_999_999).is_empty());
        assert_eq!(fl.stats().refused_hellos, 1);
        assert_eq!(fl.handle(hello(0), 2_000_000).len(), 1);
        assert_eq!(fl.stats().sessions, 2);
    }

    #[test]
    fn duplicate_seq_is_discarded_and_counted() {
        let mut fl = follower();
        fl.handle(hello(0), 0);
        let t = |seq| f(seq, Payload::JointTarget { q: vec![0.1; 5], gripper: 0.0 });
        fl.handle(t(1), 0);
        fl.handle(t(1), 0);
        fl.handle(t(0), 0);
        assert_eq!(fl.stats().targets, 1);
        assert_eq!(fl.stats().duplicate_seq, 2);
    }

    #[test]
    fn ping_is_answered_with_the_same_nonce() {
        let mut fl = follower();
        fl.handle(hello(0), 0);
        let out = fl.handle(f(1, Payload::Ping { nonce: 0xDEAD_BEEF }), 5);
        assert_eq!(out[0].payload, Payload::Pong { nonce: 0xDEAD_BEEF });
    }

    #[test]
    fn frames_before_hello_are_ignored() {
        let mut fl = follower();
        fl.handle(f(3, Payload::JointTarget { q: vec![0.1; 5], gripper: 0.0 }), 0);
        assert!(fl.mode().is_none());
        assert_eq!(fl.stats().without_session, 1);
    }

    #[test]
    fn joint_targets_are_tracked_and_reported() {
        let mut fl = follower();
        fl.handle(hello(0), 0);
        let target = vec![0.3, -0.2, 0.1, 0.0, 0.4];
        fl.handle(f(1, Payload::JointTarget { q: target.clone(), gripper: 0.5 }), 0);
        let mut reports = 0;
        for k in 0..100 {
            if fl.tick(k * 10_000, 0.01).unwrap().report.is_some() {
                reports += 1;
            }
        }
        assert_eq!(reports, 50);
        assert_eq!(fl.state().q.0, target);
        assert_eq!(fl.state().gripper, 0.5);
    }

    #[test]
    fn malformed_targets_are_rejected() {
        let mut fl = follower();
        fl.handle(hello(0), 0);
        fl.handle(f(1, Payload::JointTarget { q: vec![0.1; 4], gripper: 0.0 }), 0);
        fl.handle(f(2, Payload::PoseTarget { r: [2.0, 0.0, 0.0, 0.0], t: [0.1, 0.0, 0.1], gripper: 0.0 }), 0);
        assert_eq!(fl.stats().invalid_targets, 2);
        assert!(fl.mode().is_none());
    }
}
