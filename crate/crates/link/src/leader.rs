//! Leader side: opens a session, streams targets and tracks what the follower
//! reports back.

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use telearm_core::master::Workspace;
use telearm_core::DHChain;

use crate::connection::Connection;
use crate::faults::LinkFaults;
use crate::frame::{Payload, Role, TeleopFrame, PROTO_VERSION};

/// Latest follower state seen by the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteState {
    pub q: Vec<f64>,
    pub gripper: f64,
    pub seq: u32,
    /// Follower clock at send, microseconds since its start.
    pub t_send_us: u64,
    pub received: Instant,
}

pub struct LeaderSession {
    conn: Connection,
    origin: Instant,
    seq: u32,
    nonce: u64,
    pending_pings: Vec<(u64, Instant)>,
    follower_hello: bool,
    last_state: Option<RemoteState>,
    last_rtt: Option<Duration>,
}

impl LeaderSession {
    /// Connects and sends Hello. Replies are read by [`poll`](Self::poll).
    pub fn connect(addr: &str, faults: Option<(LinkFaults, u64)>) -> io::Result<Self> {
        let conn = Connection::connect(addr, faults)?;
        let mut s = Self {
            conn,
            origin: Instant::now(),
            seq: 0,
            nonce: 0,
            pending_pings: Vec::new(),
            follower_hello: false,
            last_state: None,
            last_rtt: None,
        };
        s.send(Payload::Hello { role: Role::Leader, proto_version: PROTO_VERSION });
        Ok(s)
    }

    pub fn now_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }

    pub fn send(&mut self, payload: Payload) -> bool {
        let frame = TeleopFrame { seq: self.seq, t_send_us: self.now_us(), payload };
        self.seq = self.seq.wrapping_add(1);
        self.conn.send(frame)
    }

    pub fn ping(&mut self) -> bool {
        self.nonce += 1;
        self.pending_pings.push((self.nonce, Instant::now()));
        if self.pending_pings.len() > 64 {
            self.pending_pings.remove(0);
        }
        self.send(Payload::Ping { nonce: self.nonce })
    }

    /// Processes everything received so far, waiting up to `wait` for the
    /// first frame. Returns `false` once the connection has ended.
    pub fn poll(&mut self, wait: Duration) -> bool {
        let mut next = self.conn.recv_timeout(wait);
        while let Some(frame) = next {
            match frame.payload {
                Payload::Hello { role: Role::Follower, .. } => self.follower_hello = true,
                Payload::StateReport { q, gripper } => {
                    self.last_state = Some(RemoteState {
                        q,
                        gripper,
                        seq: frame.seq,
                        t_send_us: frame.t_send_us,
                        received: Instant::now(),
                    });
                }
                Payload::Pong { nonce } => {
                    if let Some(i) = self.pending_pings.iter().position(|(n, _)| *n == nonce) {
                        self.last_rtt = Some(self.pending_pings[i].1.elapsed());
                        self.pending_pings.drain(..=i);
                    }
                }
                _ => {}
            }
            next = self.conn.try_recv();
        }
        !self.conn.is_finished()
    }

    pub fn follower_acknowledged(&self) -> bool {
        self.follower_hello
    }

    pub fn last_state(&self) -> Option<&RemoteState> {
        self.last_state.as_ref()
    }

    pub fn last_rtt(&self) -> Option<Duration> {
        self.last_rtt
    }

    pub fn close(self) {
        self.conn.close();
    }
}

/// One line of a target script: a target due `t_ms` after the script starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTarget {
    pub t_ms: u64,
    #[serde(flatten)]
    pub target: ScriptTarget,
}

/// Same shapes as the UI's inbound target messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptTarget {
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
}

impl ScriptTarget {
    /// The frame payload for this target: joints clamped to the chain
    /// limits, poses clamped to the workspace. A missing gripper keeps `gripper`.
    pub fn to_payload(&self, chain: &DHChain, ws: &Workspace, gripper: f64) -> Payload {
        match self {
            ScriptTarget::TargetJoints { q, gripper: g } => {
                Payload::JointTarget { q: chain.clamp(q).0, gripper: clamp_gripper(g.unwrap_or(gripper)) }
            }
            ScriptTarget::TargetPose { t, rpy, gripper: g } => {
                let pose = ws.pose(*t, *rpy);
                Payload::PoseTarget {
                    r: pose.r.vec4(),
                    t: pose.t.to_array(),
                    gripper: clamp_gripper(g.unwrap_or(gripper)),
                }
            }
        }
    }
}

fn clamp_gripper(g: f64) -> f64 {
    if g.is_finite() {
        g.clamp(0.0, 1.0)
    } else {
        0.0
    }
}
