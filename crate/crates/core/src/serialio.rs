//! Byte framing between the host and the servo controller.
//!
//! ```text
//! [0xAA][0x55][type:u8][len:u8][payload: len bytes][crc8]
//! ```
//!
//! The CRC covers `type`, `len` and the payload. Multi-byte fields are
//! little-endian. Servo positions travel as centidegrees in `0..=18000`,
//! where 0 is −π/2 and 18000 is +π/2; the gripper ratio uses the same
//! range. Potentiometers are raw 10-bit counts.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::crc::crc8;
use crate::master::{PotReading, ADC_MAX, CHANNELS};

pub const MAGIC: [u8; 2] = [0xAA, 0x55];
pub const HEADER_LEN: usize = 4;
pub const SERVO_CHANNELS: usize = 6;
pub const CENTIDEG_MAX: u16 = 18000;
pub const BAUD_RATE: u32 = 115_200;

pub const TYPE_SET_TARGETS: u8 = 0x01;
pub const TYPE_GET_STATE: u8 = 0x02;
pub const TYPE_STATE: u8 = 0x81;
pub const TYPE_POTS: u8 = 0x82;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerialFrame {
    /// Host → device: five joint targets and the gripper, in centidegrees.
    SetTargets { servos: [u16; SERVO_CHANNELS] },
    /// Host → device: request a `State` reply.
    GetState,
    /// Device → host: measured servo positions, in centidegrees.
    State { servos: [u16; SERVO_CHANNELS] },
    /// Device → host: raw potentiometer counts.
    Pots { counts: [u16; CHANNELS] },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("servo value {0} exceeds {CENTIDEG_MAX} centidegrees")]
    ServoOutOfRange(u16),
    #[error("potentiometer count {0} exceeds {ADC_MAX}")]
    PotOutOfRange(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("bad length {len} for frame type {kind:#04x}")]
    BadLength { kind: u8, len: u8 },
    #[error("crc mismatch: expected {expected:#04x}, found {found:#04x}")]
    BadCrc { expected: u8, found: u8 },
    #[error("payload value out of range")]
    OutOfRange,
    #[error("incomplete frame: {needed} more bytes needed")]
    Incomplete { needed: usize },
}

impl SerialFrame {
    pub fn type_code(&self) -> u8 {
        match self {
            SerialFrame::SetTargets { .. } => TYPE_SET_TARGETS,
            SerialFrame::GetState => TYPE_GET_STATE,
            SerialFrame::State { .. } => TYPE_STATE,
            SerialFrame::Pots { .. } => TYPE_POTS,
        }
    }

    /// Builds a `SetTargets` frame from joint angles (rad) and a gripper ratio.
    pub fn set_targets(q: &[f64], gripper: f64) -> Self {
        SerialFrame::SetTargets { servos: servo_words(q, gripper) }
    }

    pub fn state(q: &[f64], gripper: f64) -> Self {
        SerialFrame::State { servos: servo_words(q, gripper) }
    }
}

fn servo_words(q: &[f64], gripper: f64) -> [u16; SERVO_CHANNELS] {
    let mut out = [angle_to_centideg(0.0); SERVO_CHANNELS];
    for (o, v) in out.iter_mut().zip(q.iter().take(SERVO_CHANNELS - 1)) {
        *o = angle_to_centideg(*v);
    }
    out[SERVO_CHANNELS - 1] = ratio_to_centideg(gripper);
    out
}

/// Splits servo words into joint angles and the gripper ratio.
pub fn servo_values(servos: &[u16; SERVO_CHANNELS]) -> ([f64; SERVO_CHANNELS - 1], f64) {
    let mut q = [0.0; SERVO_CHANNELS - 1];
    for (qi, s) in q.iter_mut().zip(servos) {
        *qi = centideg_to_angle(*s);
    }
    (q, centideg_to_ratio(servos[SERVO_CHANNELS - 1]))
}

pub fn angle_to_centideg(q: f64) -> u16 {
    let q = if q.is_finite() { q } else { 0.0 };
    let c = ((q + FRAC_PI_2) * (f64::from(CENTIDEG_MAX) / PI)).round();
    c.clamp(0.0, f64::from(CENTIDEG_MAX)) as u16
}

/// Centred on the midpoint so that the zero angle decodes exactly.
pub fn centideg_to_angle(c: u16) -> f64 {
    (f64::from(c) - f64::from(CENTIDEG_MAX / 2)) * (PI / f64::from(CENTIDEG_MAX))
}

pub fn ratio_to_centideg(g: f64) -> u16 {
    let g = if g.is_finite() { g.clamp(0.0, 1.0) } else { 0.0 };
    (g * f64::from(CENTIDEG_MAX)).round() as u16
}

pub fn centideg_to_ratio(c: u16) -> f64 {
    f64::from(c) / f64::from(CENTIDEG_MAX)
}

fn payload_len(kind: u8) -> Option<usize> {
    match kind {
        TYPE_GET_STATE => Some(0),
        TYPE_SET_TARGETS | TYPE_STATE => Some(2 * SERVO_CHANNELS),
        TYPE_POTS => Some(2 * CHANNELS),
        _ => None,
    }
}

pub fn encode(frame: &SerialFrame) -> Result<Vec<u8>, EncodeError> {
    let words: &[u16] = match frame {
        SerialFrame::SetTargets { servos } | SerialFrame::State { servos } => {
            if let Some(&bad) = servos.iter().find(|&&s| s > CENTIDEG_MAX) {
                return Err(EncodeError::ServoOutOfRange(bad));
            }
            servos
        }
        SerialFrame::Pots { counts } => {
            if let Some(&bad) = counts.iter().find(|&&c| c > ADC_MAX) {
                return Err(EncodeError::PotOutOfRange(bad));
            }
            counts
        }
        SerialFrame::GetState => &[],
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * words.len() + 1);
    out.extend_from_slice(&MAGIC);
    out.push(frame.type_code());
    out.push((2 * words.len()) as u8);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.push(crc8(&out[2..]));
    Ok(out)
}

/// Decodes one frame from the start of `bytes`, returning it with the number
/// of bytes it occupied.
pub fn decode(bytes: &[u8]) -> Result<(SerialFrame, usize), DecodeError> {
    let need = |n: usize| Err(DecodeError::Incomplete { needed: n - bytes.len() });
    if bytes.is_empty() {
        return need(HEADER_LEN + 1);
    }
    if bytes[0] != MAGIC[0] || (bytes.len() > 1 && bytes[1] != MAGIC[1]) {
        return Err(DecodeError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return need(HEADER_LEN + 1);
    }
    let kind = bytes[2];
    let len = bytes[3];
    let expected = payload_len(kind).ok_or(DecodeError::UnknownType(kind))?;
    if usize::from(len) != expected {
        return Err(DecodeError::BadLength { kind, len });
    }
    let total = HEADER_LEN + expected + 1;
    if bytes.len() < total {
        return need(total);
    }
    let crc = crc8(&bytes[2..total - 1]);
    if crc != bytes[total - 1] {
        return Err(DecodeError::BadCrc { expected: crc, found: bytes[total - 1] });
    }
    let payload = &bytes[HEADER_LEN..total - 1];
    let mut words = [0u16; SERVO_CHANNELS];
    for (w, chunk) in words.iter_mut().zip(payload.chunks_exact(2)) {
        *w = u16::from_le_bytes([chunk[0], chunk[1]]);
    }
    let frame = match kind {
        TYPE_GET_STATE => SerialFrame::GetState,
        TYPE_SET_TARGETS | TYPE_STATE => {
            if words.iter().any(|&w| w > CENTIDEG_MAX) {
                return Err(DecodeError::OutOfRange);
            }
            if kind == TYPE_STATE {
                SerialFrame::State { servos: words }
            } else {
                SerialFrame::SetTargets { servos: words }
            }
        }
        _ => {
            if words.iter().any(|&w| w > ADC_MAX) {
                return Err(DecodeError::OutOfRange);
            }
            SerialFrame::Pots { counts: words }
        }
    };
    Ok((frame, total))
}

/// Counters kept by [`StreamDecoder`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub frames: u64,
    pub skipped_bytes: u64,
    pub crc_errors: u64,
    pub length_errors: u64,
    pub unknown_types: u64,
    pub range_errors: u64,
}

/// Incremental decoder that resynchronizes on the magic prefix after
/// garbage or corrupted frames.
#[derive(Debug, Default, Clone)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    stats: DecoderStats,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed.
    pub fn pending(&self) -> &[u8] {
        &self.buf
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    /// Next complete frame, or `Ok(None)` when more bytes are needed.
    /// Errors are reported once; the offending magic byte is then skipped.
    pub fn next_frame(&mut self) -> Result<Option<SerialFrame>, DecodeError> {
        loop {
            let start = self.buf.iter().position(|&b| b == MAGIC[0]).unwrap_or(self.buf.len());
            if start > 0 {
                self.stats.skipped_bytes += start as u64;
                self.buf.drain(..start);
            }
            match decode(&self.buf) {
                Ok((frame, used)) => {
                    self.buf.drain(..used);
                    self.stats.frames += 1;
                    return Ok(Some(frame));
                }
                Err(DecodeError::Incomplete { .. }) => return Ok(None),
                Err(DecodeError::BadMagic) => {
                    self.stats.skipped_bytes += 1;
                    self.buf.drain(..1);
                }
                Err(e) => {
                    match e {
                        DecodeError::BadCrc { .. } => self.stats.crc_errors += 1,
                        DecodeError::BadLength { .. } => self.stats.length_errors += 1,
                        DecodeError::UnknownType(_) => self.stats.unknown_types += 1,
                        _ => self.stats.range_errors += 1,
                    }
                    self.stats.skipped_bytes += 1;
                    self.buf.drain(..1);
                    return Err(e);
                }
            }
        }
    }

    /// Drains every complete frame, discarding errors (they stay counted).
    pub fn drain_frames(&mut self) -> Vec<SerialFrame> {
        let mut out = Vec::new();
        loop {
            match self.next_frame() {
                Ok(Some(f)) => out.push(f),
                Ok(None) => return out,
                Err(_) => continue,
            }
        }
    }
}

impl From<PotReading> for SerialFrame {
    fn from(r: PotReading) -> Self {
        SerialFrame::Pots { counts: r.counts() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_joint_targets_round_trip() {
        let f = SerialFrame::set_targets(&[0.0; 5], 0.5);
        assert_eq!(f, SerialFrame::SetTargets { servos: [9000, 9000, 9000, 9000, 9000, 9000] });
        let bytes = encode(&f).unwrap();
        assert_eq!(bytes.len(), 17);
        assert_eq!(&bytes[..4], &[0xAA, 0x55, 0x01, 12]);
        assert_eq!(&bytes[4..6], &9000u16.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), (f, 17));
    }

    #[test]
    fn get_state_layout() {
        let bytes = encode(&SerialFrame::GetState).unwrap();
        assert_eq!(bytes, vec![0xAA, 0x55, 0x02, 0x00, crc8(&[0x02, 0x00])]);
    }

    #[test]
    fn distinct_errors() {
        let good = encode(&SerialFrame::GetState).unwrap();
        let mut bad = good.clone();
        bad[1] = 0x56;
        assert_eq!(decode(&bad), Err(DecodeError::BadMagic));
        let mut bad = good.clone();
        bad[2] = 0x7F;
        assert_eq!(decode(&bad), Err(DecodeError::UnknownType(0x7F)));
        let mut bad = good.clone();
        bad[3] = 3;
        assert_eq!(decode(&bad), Err(DecodeError::BadLength { kind: 0x02, len: 3 }));
        let mut bad = good.clone();
        bad[4] ^= 0x01;
        assert!(matches!(decode(&bad), Err(DecodeError::BadCrc { .. })));
        assert!(matches!(decode(&good[..3]), Err(DecodeError::Incomplete { .. })));
    }

    #[test]
    fn out_of_range_payloads() {
        assert_eq!(
            encode(&SerialFrame::State { servos: [18001, 0, 0, 0, 0, 0] }),
            Err(EncodeError::ServoOutOfRange(18001))
        );
        assert_eq!(encode(&SerialFrame::Pots { counts: [1024, 0, 0, 0, 0, 0] }), Err(EncodeError::PotOutOfRange(1024)));
        // Hand-build a POTS frame with an out-of-range count and a valid CRC.
        let mut raw = vec![0xAA, 0x55, TYPE_POTS, 12];
        raw.extend_from_slice(&2000u16.to_le_bytes());
        raw.extend_from_slice(&[0; 10]);
        raw.push(crc8(&raw[2..]));
        assert_eq!(decode(&raw), Err(DecodeError::OutOfRange));
    }

    #[test]
    fn quantization_error_bound() {
        let mut worst: f64 = 0.0;
        for i in 0..=10_000 {
            let q = -FRAC_PI_2 + PI * f64::from(i) / 10_000.0;
            worst = worst.max((centideg_to_angle(angle_to_centideg(q)) - q).abs());
        }
        assert!(worst <= 0.01f64.to_radians() / 2.0 + 1e-15, "{worst}");
        assert_eq!(angle_to_centideg(-FRAC_PI_2), 0);
        assert_eq!(angle_to_centideg(FRAC_PI_2), 18000);
        assert_eq!(angle_to_centideg(10.0), 18000);
    }

    #[test]
    fn truncated_stream_keeps_bytes() {
        let a = encode(&SerialFrame::GetState).unwrap();
        let b = encode(&SerialFrame::state(&[0.1, 0.2, 0.3, 0.4, 0.5], 1.0)).unwrap();
        let mut dec = StreamDecoder::new();
        dec.push(&a);
        dec.push(&b[..9]);
        assert_eq!(dec.next_frame(), Ok(Some(SerialFrame::GetState)));
        assert_eq!(dec.next_frame(), Ok(None));
        assert_eq!(dec.pending(), &b[..9]);
        dec.push(&b[9..]);
        assert!(matches!(dec.next_frame(), Ok(Some(SerialFrame::State { .. }))));
        assert!(dec.pending().is_empty());
    }

    #[test]
    fn resyncs_after_garbage_and_corruption() {
        let good = encode(&SerialFrame::Pots { counts: [1, 2, 3, 4, 5, 1023] }).unwrap();
        let mut corrupt = good.clone();
        corrupt[6] ^= 0x10;
        let mut dec = StreamDecoder::new();
        dec.push(&[0x00, 0xAA, 0x13, 0xAA, 0x55, 0x99]);
        dec.push(&corrupt);
        dec.push(&good);
        let frames = dec.drain_frames();
        assert_eq!(frames, vec![SerialFrame::Pots { counts: [1, 2, 3, 4, 5, 1023] }]);
        assert_eq!(dec.stats().crc_errors, 1);
        assert_eq!(dec.stats().unknown_types, 1);
    }
}
