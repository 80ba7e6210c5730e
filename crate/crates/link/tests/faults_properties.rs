use std::time::Duration;

use proptest::prelude::*;
use telearm_link::faults::{FaultSchedule, LinkFaults, SimLink};

fn faults() -> impl Strategy<Value = LinkFaults> {
    (0.0f64..200.0, 0.0f64..200.0, 0.0f64..0.9).prop_map(|(d, j, p)| LinkFaults {
        fixed_delay_ms: d,
        jitter_ms: j,
        drop_rate: p,
    })
}

proptest! {
    #[test]
    fn delivery_is_fifo_and_within_bounds(f in faults(), seed in any::<u64>(), gaps in proptest::collection::vec(0u64..50, 1..200)) {
        let mut s = FaultSchedule::new(f, seed).unwrap();
        let mut sent = Duration::ZERO;
        let mut last = Duration::ZERO;
        for g in gaps {
            sent += Duration::from_millis(g);
            if let Some(at) = s.schedule(sent) {
                prop_assert!(at >= last);
                let lo = sent + Duration::from_secs_f64(f.fixed_delay_ms / 1000.0);
                prop_assert!(at + Duration::from_nanos(1) >= lo);
                last = at;
            }
        }
    }

    #[test]
    fn same_seed_same_outcome(f in faults(), seed in any::<u64>()) {
        let run = || {
            let mut link = SimLink::new(f, seed).unwrap();
            for i in 0..100u64 {
                link.send(Duration::from_millis(i * 7), i);
            }
            link.receive(Duration::from_secs(100))
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn zero_faults_pass_everything_through_at_send_time(seed in any::<u64>(), n in 1usize..100) {
        let mut link = SimLink::new(LinkFaults::none(), seed).unwrap();
        for i in 0..n {
            let t = Duration::from_millis(i as u64);
            link.send(t, i);
            prop_assert_eq!(link.receive(t), vec![i]);
        }
    }
}
