mod common;

use common::oracles::crc8_bitwise;
use proptest::prelude::*;
use telearm_core::crc::crc8;
use telearm_core::serialio::{
    angle_to_centideg, centideg_to_angle, decode, encode, DecodeError, SerialFrame, StreamDecoder, CENTIDEG_MAX,
};

fn frame_strategy() -> impl Strategy<Value = SerialFrame> {
    let servos = proptest::array::uniform6(0..=CENTIDEG_MAX);
    prop_oneof![
        servos.clone().prop_map(|servos| SerialFrame::SetTargets { servos }),
        Just(SerialFrame::GetState),
        servos.prop_map(|servos| SerialFrame::State { servos }),
        proptest::array::uniform6(0u16..=1023).prop_map(|counts| SerialFrame::Pots { counts }),
    ]
}

proptest! {
    #[test]
    fn table_crc_matches_bitwise_oracle(data in proptest::collection::vec(any::<u8>(), 0..64)) {
        prop_assert_eq!(crc8(&data), crc8_bitwise(&data));
    }

    #[test]
    fn decode_inverts_encode(frame in frame_strategy()) {
        let bytes = encode(&frame).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), (frame, bytes.len()));
    }

    #[test]
    fn every_single_bit_flip_is_rejected(frame in frame_strategy()) {
        let bytes = encode(&frame).unwrap();
        for bit in 0..bytes.len() * 8 {
            let mut bad = bytes.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(decode(&bad).is_err(), "bit {} accepted", bit);
        }
    }

    #[test]
    fn payload_flips_are_crc_errors(frame in frame_strategy().prop_filter("has payload", |f| *f != SerialFrame::GetState)) {
        let bytes = encode(&frame).unwrap();
        for bit in 32..(bytes.len() - 1) * 8 {
            let mut bad = bytes.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            let is_crc = matches!(decode(&bad), Err(DecodeError::BadCrc { .. }));
            prop_assert!(is_crc);
        }
    }

    #[test]
    fn stream_recovers_frames_after_garbage(
        garbage in proptest::collection::vec(any::<u8>(), 0..40),
        frames in proptest::collection::vec(frame_strategy(), 1..6),
        chunk in 1usize..9,
    ) {
        let mut stream = garbage;
        // A garbage tail that happens to look like a truncated header would
        // legitimately swallow the first frame, so separate with a byte that
        // cannot start a frame.
        stream.push(0x00);
        for f in &frames {
            stream.extend(encode(f).unwrap());
        }
        let mut dec = StreamDecoder::new();
        let mut got = Vec::new();
        for piece in stream.chunks(chunk) {
            dec.push(piece);
            got.extend(dec.drain_frames());
        }
        // Only the tail of the recovered sequence is guaranteed: garbage can
        // contain a valid-looking frame of its own.
        prop_assert!(got.len() >= frames.len());
        prop_assert_eq!(&got[got.len() - frames.len()..], &frames[..]);
    }

    #[test]
    fn quantization_error_is_within_half_a_centidegree(q in -std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2) {
        let back = centideg_to_angle(angle_to_centideg(q));
        prop_assert!((back - q).abs() <= 0.005f64.to_radians() + 1e-15);
    }
}
