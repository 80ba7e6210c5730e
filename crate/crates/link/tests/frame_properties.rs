use proptest::prelude::*;
use telearm_link::frame::{decode, encode, Payload, Role, TeleopFrame};

fn finite() -> impl Strategy<Value = f64> {
    -1e6f64..1e6
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        (proptest::collection::vec(finite(), 0..8), finite())
            .prop_map(|(q, gripper)| Payload::JointTarget { q, gripper }),
        (proptest::array::uniform4(finite()), proptest::array::uniform3(finite()), finite())
            .prop_map(|(r, t, gripper)| Payload::PoseTarget { r, t, gripper }),
        (proptest::collection::vec(finite(), 0..8), finite())
            .prop_map(|(q, gripper)| Payload::StateReport { q, gripper }),
        (any::<bool>(), any::<u8>()).prop_map(|(l, v)| Payload::Hello {
            role: if l { Role::Leader } else { Role::Follower },
            proto_version: v
        }),
        any::<u64>().prop_map(|nonce| Payload::Ping { nonce }),
        any::<u64>().prop_map(|nonce| Payload::Pong { nonce }),
    ]
}

fn frame() -> impl Strategy<Value = TeleopFrame> {
    (any::<u32>(), any::<u64>(), payload()).prop_map(|(seq, t_send_us, payload)| TeleopFrame {
        seq,
        t_send_us,
        payload,
    })
}

proptest! {
    #[test]
    fn decode_inverts_encode(f in frame()) {
        let bytes = encode(&f).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), (f, bytes.len()));
    }

    #[test]
    fn every_single_bit_flip_is_rejected(f in frame()) {
        let bytes = encode(&f).unwrap();
        for bit in 0..bytes.len() * 8 {
            let mut bad = bytes.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(decode(&bad).is_err(), "bit {} accepted", bit);
        }
    }

    #[test]
    fn concatenated_frames_decode_in_order(fs in proptest::collection::vec(frame(), 1..10)) {
        let mut stream = Vec::new();
        for f in &fs {
            stream.extend(encode(f).unwrap());
        }
        let mut at = 0;
        for f in &fs {
            let (got, used) = decode(&stream[at..]).unwrap();
            prop_assert_eq!(&got, f);
            at += used;
        }
        prop_assert_eq!(at, stream.len());
    }
}
