use proptest::prelude::*;
use telearm_core::master::{map_to_joints, map_to_pose, CalibrationState, PotReading, Workspace, ADC_MAX};
use telearm_core::umirobot_chain;

fn reading() -> impl Strategy<Value = PotReading> {
    proptest::array::uniform6(0..=ADC_MAX).prop_map(|c| PotReading::new(c).unwrap())
}

fn calibrated() -> impl Strategy<Value = CalibrationState> {
    proptest::collection::vec(reading(), 2..20)
        .prop_map(|rs| rs.iter().fold(CalibrationState::new(), |c, r| c.ingest(r)))
        .prop_filter("usable span", CalibrationState::is_calibrated)
}

proptest! {
    #[test]
    fn ingest_only_widens(cal in calibrated(), r in reading()) {
        let next = cal.ingest(&r);
        for (a, b) in cal.channels.iter().zip(&next.channels) {
            prop_assert!(b.min_seen <= a.min_seen && b.max_seen >= a.max_seen);
        }
        prop_assert!(next.is_calibrated());
    }

    #[test]
    fn calibration_file_round_trips(cal in calibrated()) {
        prop_assert_eq!(cal.to_file_string().parse::<CalibrationState>().unwrap(), cal);
    }

    #[test]
    fn joint_mapping_stays_in_limits_and_is_monotone(cal in calibrated(), r in reading(), ch in 0usize..5, bump in 1u16..200) {
        let chain = umirobot_chain();
        let (q, g) = map_to_joints(&cal, &r, &chain).unwrap();
        prop_assert!(chain.within_limits(&q, 0.0));
        prop_assert!((0.0..=1.0).contains(&g));
        let mut counts = r.counts();
        counts[ch] = (counts[ch] + bump).min(ADC_MAX);
        let (q2, _) = map_to_joints(&cal, &PotReading::new(counts).unwrap(), &chain).unwrap();
        prop_assert!(q2[ch] >= q[ch]);
    }

    #[test]
    fn pose_mapping_stays_in_the_box(cal in calibrated(), r in reading()) {
        let ws = Workspace::default();
        let pose = map_to_pose(&cal, &r, &ws).unwrap();
        let t = pose.t.to_array();
        for ((v, lo), hi) in t.iter().zip(ws.min).zip(ws.max) {
            prop_assert!((lo..=hi).contains(v));
        }
        prop_assert!((pose.r.quaternion().norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn out_of_range_counts_are_rejected() {
    assert!(PotReading::new([0, 0, 0, 0, 0, 1024]).is_err());
    assert!(CalibrationState::new().ingest_counts([2000; 6]).is_err());
}
