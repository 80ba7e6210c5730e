//! Leader → faulty link → follower → simulated robot, on a simulated clock.
//!
//! Frames travel as encoded bytes so the codec is on the path. Everything is
//! deterministic given the seed.

use std::time::Duration;

use telearm_core::{fkm, ControlMode, DHChain, Pose, ServoModel, SimRobot, UnitQuaternion};

use crate::faults::{FaultError, LinkFaults, SimLink};
use crate::follower::{Follower, FollowerConfig, FollowerError};
use crate::frame::{decode, encode, Payload, Role, TeleopFrame, PROTO_VERSION};

#[derive(Debug, Clone)]
pub struct TeleopSimConfig {
    /// Simulated duration (s).
    pub duration: f64,
    /// Follower control period (s).
    pub period: f64,
    /// Leader send interval, in follower periods.
    pub send_every: u32,
    pub forward: LinkFaults,
    pub backward: LinkFaults,
    pub seed: u64,
    pub follower: FollowerConfig,
    pub servo: ServoModel,
    pub q0: Vec<f64>,
}

impl Default for TeleopSimConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            period: 0.01,
            send_every: 2,
            forward: LinkFaults::none(),
            backward: LinkFaults::none(),
            seed: 0,
            follower: FollowerConfig::default(),
            servo: ServoModel::default(),
            q0: vec![0.0; 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleopSample {
    pub t: f64,
    /// End-effector distance to the target the follower currently holds;
    /// `None` before the first pose target arrives.
    pub err_received: Option<f64>,
    /// End-effector distance to what the leader commands right now.
    pub err_commanded: f64,
}

#[derive(Debug, Clone)]
pub struct TeleopSimReport {
    pub samples: Vec<TeleopSample>,
    pub frames_sent: u64,
    pub targets_applied: u64,
    pub reports_received: u64,
    /// Mean age of state reports on arrival at the leader (s).
    pub mean_report_age: f64,
    pub final_q: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TeleopSimError {
    #[error(transparent)]
    Faults(#[from] FaultError),
    #[error(transparent)]
    Follower(#[from] FollowerError),
}

impl TeleopSimReport {
    pub fn max_err_received(&self, after: f64) -> f64 {
        self.samples.iter().filter(|s| s.t >= after).filter_map(|s| s.err_received).fold(0.0, f64::max)
    }

    pub fn max_err_commanded(&self, after: f64) -> f64 {
        self.samples.iter().filter(|s| s.t >= after).map(|s| s.err_commanded).fold(0.0, f64::max)
    }
}

/// Circle at constant speed in a plane parallel to the base x-y plane, with
/// fixed orientation.
#[derive(Debug, Clone, Copy)]
pub struct Circle {
    pub center: [f64; 3],
    pub radius: f64,
    /// Tangential speed (m/s).
    pub speed: f64,
    pub orientation: UnitQuaternion,
}

impl Circle {
    pub fn at(&self, t: f64) -> Pose {
        let phase = self.speed / self.radius * t;
        let (s, c) = phase.sin_cos();
        let p = [self.center[0] + self.radius * c, self.center[1] + self.radius * s, self.center[2]];
        Pose::new(self.orientation, telearm_core::PureQuaternion::from_array(p))
    }
}

fn us(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

pub fn simulate_teleop<F>(chain: &DHChain, cfg: &TeleopSimConfig, target: F) -> Result<TeleopSimReport, TeleopSimError>
where
    F: Fn(f64) -> Pose,
{
    let mut forward = SimLink::<Vec<u8>>::new(cfg.forward, cfg.seed)?;
    let mut backward = SimLink::<Vec<u8>>::new(cfg.backward, cfg.seed.wrapping_add(1))?;
    let robot = SimRobot::new(chain.clone(), cfg.servo.clone(), &cfg.q0);
    let mut follower = Follower::new(chain.clone(), cfg.follower, robot, &cfg.q0)?;

    let steps = (cfg.duration / cfg.period).round() as u64;
    let mut leader_seq = 0u32;
    let mut report = TeleopSimReport {
        samples: Vec::with_capacity(steps as usize),
        frames_sent: 0,
        targets_applied: 0,
        reports_received: 0,
        mean_report_age: 0.0,
        final_q: Vec::new(),
    };
    let mut age_sum = 0.0;
    let send = |link: &mut SimLink<Vec<u8>>, now: f64, payload: Payload, seq: &mut u32| {
        let frame = TeleopFrame { seq: *seq, t_send_us: us(now), payload };
        *seq += 1;
        link.send(Duration::from_secs_f64(now), encode(&frame).expect("finite payload"));
    };

    send(&mut forward, 0.0, Payload::Hello { role: Role::Leader, proto_version: PROTO_VERSION }, &mut leader_seq);
    report.frames_sent += 1;
    for k in 0..steps {
        let now = k as f64 * cfg.period;
        let now_d = Duration::from_secs_f64(now);
        let commanded = target(now);
        if k % u64::from(cfg.send_every.max(1)) == 0 {
            let p = Payload::PoseTarget { r: commanded.r.vec4(), t: commanded.t.to_array(), gripper: 0.0 };
            send(&mut forward, now, p, &mut leader_seq);
            report.frames_sent += 1;
        }
        for bytes in forward.receive(now_d) {
            let (frame, _) = decode(&bytes).expect("link delivers intact bytes");
            for reply in follower.handle(frame, us(now)) {
                backward.send(now_d, encode(&reply).expect("finite payload"));
            }
        }
        let tick = follower.tick(us(now), cfg.period)?;
        if let Some(r) = tick.report {
            backward.send(now_d, encode(&r).expect("finite payload"));
        }
        for bytes in backward.receive(now_d) {
            let (frame, _) = decode(&bytes).expect("link delivers intact bytes");
            if let Payload::StateReport { .. } = frame.payload {
                report.reports_received += 1;
                age_sum += now - frame.t_send_us as f64 * 1e-6;
            }
        }

        let t_meas = fkm(chain, &tick.state.q).expect("dof checked").t;
        let err_received = match follower.mode() {
            Some(ControlMode::TaskSpace { pose }) => Some((t_meas - pose.t).norm()),
            _ => None,
        };
        report.samples.push(TeleopSample { t: now, err_received, err_commanded: (t_meas - commanded.t).norm() });
    }
    report.targets_applied = follower.stats().targets;
    report.mean_report_age = if report.reports_received > 0 { age_sum / report.reports_received as f64 } else { 0.0 };
    report.final_q = follower.state().q.0.clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use telearm_core::master::Workspace;
    use telearm_core::umirobot_chain;

    fn circle() -> Circle {
        let ws = Workspace::default();
        Circle {
            center: [0.14, 0.0, 0.08],
            radius: 0.03,
            speed: 0.02,
            orientation: ws.pose([0.14, 0.0, 0.08], [0.0; 3]).r,
        }
    }

    #[test]
    fn zero_delay_tracks_closely() {
        let cfg = TeleopSimConfig { duration: 10.0, ..Default::default() };
        let c = circle();
        let rep = simulate_teleop(&umirobot_chain(), &cfg, |t| c.at(t)).unwrap();
        assert!(rep.max_err_received(3.0) < 0.01, "{}", rep.max_err_received(3.0));
        assert_eq!(rep.frames_sent, 501);
        assert_eq!(rep.targets_applied, 500);
    }

    #[test]
    fn delay_shows_up_as_report_age() {
        let cfg = TeleopSimConfig { duration: 5.0, backward: LinkFaults::delay_ms(300.0), ..Default::default() };
        let c = circle();
        let rep = simulate_teleop(&umirobot_chain(), &cfg, |t| c.at(t)).unwrap();
        assert!((rep.mean_report_age - 0.3).abs() < 0.011, "{}", rep.mean_report_age);
    }

    #[test]
    fn runs_are_deterministic() {
        let faults = LinkFaults { fixed_delay_ms: 50.0, jitter_ms: 30.0, drop_rate: 0.1 };
        let cfg = TeleopSimConfig { duration: 3.0, forward: faults, backward: faults, seed: 4, ..Default::default() };
        let c = circle();
        let a = simulate_teleop(&umirobot_chain(), &cfg, |t| c.at(t)).unwrap();
        let b = simulate_teleop(&umirobot_chain(), &cfg, |t| c.at(t)).unwrap();
        assert_eq!(a.final_q, b.final_q);
        assert_eq!(a.samples, b.samples);
    }
}
