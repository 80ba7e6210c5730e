//! Teleoperation frames and their wire encoding.
//!
//! Wire layout: `[len: u16 LE][body: len bytes][crc8]`, where the CRC covers
//! the two length bytes and the body, and the body is
//! `[kind: u8][seq: u32 LE][t_send_us: u64 LE][payload]`. Floats are f64 LE.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use telearm_core::crc::crc8;
use thiserror::Error;

pub const PROTO_VERSION: u8 = 1;
/// Bytes of `len` prefix plus trailing CRC.
pub const FRAMING_OVERHEAD: usize = 3;
const BODY_HEADER: usize = 1 + 4 + 8;
/// Upper bound on joint vector length carried in a frame.
pub const MAX_JOINTS: usize = 16;

const KIND_JOINT_TARGET: u8 = 0x01;
const KIND_POSE_TARGET: u8 = 0x02;
const KIND_STATE_REPORT: u8 = 0x03;
const KIND_HELLO: u8 = 0x10;
const KIND_PING: u8 = 0x11;
const KIND_PONG: u8 = 0x12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    JointTarget {
        q: Vec<f64>,
        gripper: f64,
    },
    /// `r` is `[w, x, y, z]`, `t` in metres.
    PoseTarget {
        r: [f64; 4],
        t: [f64; 3],
        gripper: f64,
    },
    StateReport {
        q: Vec<f64>,
        gripper: f64,
    },
    Hello {
        role: Role,
        proto_version: u8,
    },
    Ping {
        nonce: u64,
    },
    Pong {
        nonce: u64,
    },
}

impl Payload {
    fn kind(&self) -> u8 {
        match self {
            Payload::JointTarget { .. } => KIND_JOINT_TARGET,
            Payload::PoseTarget { .. } => KIND_POSE_TARGET,
            Payload::StateReport { .. } => KIND_STATE_REPORT,
            Payload::Hello { .. } => KIND_HELLO,
            Payload::Ping { .. } => KIND_PING,
            Payload::Pong { .. } => KIND_PONG,
        }
    }

    /// Targets may be superseded by newer ones; control frames may not.
    pub fn is_droppable(&self) -> bool {
        matches!(self, Payload::JointTarget { .. } | Payload::PoseTarget { .. } | Payload::StateReport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopFrame {
    pub seq: u32,
    /// Microseconds since the sender's session start.
    pub t_send_us: u64,
    pub payload: Payload,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{0} joints exceed the frame limit")]
    TooManyJoints(usize),
    #[error("non-finite value in payload")]
    NonFinite,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("need {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("crc mismatch: computed {expected:#04x}, frame carries {found:#04x}")]
    BadCrc { expected: u8, found: u8 },
    #[error("unknown frame kind {0:#04x}")]
    UnknownKind(u8),
    #[error("body length {len} does not fit kind {kind:#04x}")]
    BadLength { kind: u8, len: usize },
    #[error("non-finite value in payload")]
    NonFinite,
    #[error("unknown role {0}")]
    UnknownRole(u8),
}

struct Writer(Vec<u8>);

impl Writer {
    fn f64s(&mut self, v: &[f64]) -> Result<(), EncodeError> {
        for x in v {
            if !x.is_finite() {
                return Err(EncodeError::NonFinite);
            }
            self.0.extend_from_slice(&x.to_le_bytes());
        }
        Ok(())
    }

    fn joints(&mut self, q: &[f64], gripper: f64) -> Result<(), EncodeError> {
        if q.len() > MAX_JOINTS {
            return Err(EncodeError::TooManyJoints(q.len()));
        }
        self.0.push(q.len() as u8);
        self.f64s(q)?;
        self.f64s(&[gripper])
    }
}

pub fn encode(frame: &TeleopFrame) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer(Vec::with_capacity(64));
    w.0.extend_from_slice(&[0, 0]);
    w.0.push(frame.payload.kind());
    w.0.extend_from_slice(&frame.seq.to_le_bytes());
    w.0.extend_from_slice(&frame.t_send_us.to_le_bytes());
    match &frame.payload {
        Payload::JointTarget { q, gripper } | Payload::StateReport { q, gripper } => w.joints(q, *gripper)?,
        Payload::PoseTarget { r, t, gripper } => {
            w.f64s(r)?;
            w.f64s(t)?;
            w.f64s(&[*gripper])?;
        }
        Payload::Hello { role, proto_version } => {
            w.0.push(match role {
                Role::Leader => 0,
                Role::Follower => 1,
            });
            w.0.push(*proto_version);
        }
        Payload::Ping { nonce } | Payload::Pong { nonce } => w.0.extend_from_slice(&nonce.to_le_bytes()),
    }
    let mut bytes = w.0;
    let len = (bytes.len() - 2) as u16;
    bytes[..2].copy_from_slice(&len.to_le_bytes());
    bytes.push(crc8(&bytes));
    Ok(bytes)
}

/// Total wire size of the frame starting at `bytes`, once the prefix is in.
pub fn wire_len(bytes: &[u8]) -> Option<usize> {
    (bytes.len() >= 2).then(|| usize::from(u16::from_le_bytes([bytes[0], bytes[1]])) + FRAMING_OVERHEAD)
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u8(&mut self) -> u8 {
        let v = self.body[self.pos];
        self.pos += 1;
        v
    }

    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.body[self.pos..self.pos + 8].try_into().expect("8 bytes"));
        self.pos += 8;
        v
    }

    fn f64(&mut self) -> Result<f64, FrameError> {
        let v = f64::from_bits(self.u64());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FrameError::NonFinite)
        }
    }

    fn f64s<const N: usize>(&mut self) -> Result<[f64; N], FrameError> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }
}

/// Decodes the frame at the start of `bytes`, returning it with its wire size.
pub fn decode(bytes: &[u8]) -> Result<(TeleopFrame, usize), FrameError> {
    let total = wire_len(bytes).ok_or_else(|| FrameError::Incomplete { needed: 2 - bytes.len() })?;
    if bytes.len() < total {
        return Err(FrameError::Incomplete { needed: total - bytes.len() });
    }
    let expected = crc8(&bytes[..total - 1]);
    let found = bytes[total - 1];
    if expected != found {
        return Err(FrameError::BadCrc { expected, found });
    }
    let body = &bytes[2..total - 1];
    if body.len() < BODY_HEADER {
        return Err(FrameError::BadLength { kind: body.first().copied().unwrap_or(0), len: body.len() });
    }
    let kind = body[0];
    let seq = u32::from_le_bytes(body[1..5].try_into().expect("4 bytes"));
    let t_send_us = u64::from_le_bytes(body[5..13].try_into().expect("8 bytes"));
    let rest = body.len() - BODY_HEADER;
    let bad_len = || FrameError::BadLength { kind, len: body.len() };
    let joints_len = |n: usize| 1 + 8 * (n + 1);
    let mut r = Reader { body, pos: BODY_HEADER };
    let payload = match kind {
        KIND_JOINT_TARGET | KIND_STATE_REPORT => {
            let n = usize::from(*body.get(BODY_HEADER).ok_or_else(bad_len)?);
            if n > MAX_JOINTS || rest != joints_len(n) {
                return Err(bad_len());
            }
            r.u8();
            let q = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let gripper = r.f64()?;
            if kind == KIND_JOINT_TARGET {
                Payload::JointTarget { q, gripper }
            } else {
                Payload::StateReport { q, gripper }
            }
        }
        KIND_POSE_TARGET => {
            if rest != 8 * 8 {
                return Err(bad_len());
            }
            Payload::PoseTarget { r: r.f64s()?, t: r.f64s()?, gripper: r.f64()? }
        }
        KIND_HELLO => {
            if rest != 2 {
                return Err(bad_len());
            }
            let role = match r.u8() {
                0 => Role::Leader,
                1 => Role::Follower,
                other => return Err(FrameError::UnknownRole(other)),
            };
            Payload::Hello { role, proto_version: r.u8() }
        }
        KIND_PING | KIND_PONG => {
            if rest != 8 {
                return Err(bad_len());
            }
            let nonce = r.u64();
            if kind == KIND_PING {
                Payload::Ping { nonce }
            } else {
                Payload::Pong { nonce }
            }
        }
        other => return Err(FrameError::UnknownKind(other)),
    };
    Ok((TeleopFrame { seq, t_send_us, payload }, total))
}

/// Reads one whole wire frame without interpreting it. `Ok(None)` on a clean
/// end of stream between frames.
pub fn read_raw<R: Read>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 2];
    match reader.read_exact(&mut prefix[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    reader.read_exact(&mut prefix[1..])?;
    let total = wire_len(&prefix).expect("two bytes");
    let mut bytes = vec![0u8; total];
    bytes[..2].copy_from_slice(&prefix);
    reader.read_exact(&mut bytes[2..])?;
    Ok(Some(bytes))
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("link i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad frame: {0}")]
    Frame(#[from] FrameError),
    #[error("cannot encode frame: {0}")]
    Encode(#[from] EncodeError),
}

pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<TeleopFrame>, LinkError> {
    match read_raw(reader)? {
        None => Ok(None),
        Some(bytes) => Ok(Some(decode(&bytes)?.0)),
    }
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &TeleopFrame) -> Result<(), LinkError> {
    writer.write_all(&encode(frame)?)?;
    Ok(())
}
