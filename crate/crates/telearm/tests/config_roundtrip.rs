use std::path::PathBuf;

use proptest::prelude::*;
use telearm::config::{AppConfig, DeviceSpec, NodeRole};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, Just(0.0), Just(1e-300), Just(f64::MAX)]
}

fn device() -> impl Strategy<Value = DeviceSpec> {
    prop_oneof![Just(DeviceSpec::Sim), Just(DeviceSpec::Emulated), "[a-zA-Z0-9/_.]{1,20}".prop_map(DeviceSpec::Serial),]
}

fn role() -> impl Strategy<Value = NodeRole> {
    prop_oneof![Just(NodeRole::Follower), Just(NodeRole::Leader), Just(NodeRole::Relay), Just(NodeRole::Sim)]
}

prop_compose! {
    fn config()(
        role in role(),
        device in device(),
        tick in 1.0..1000.0f64,
        report in 1.0..100.0f64,
        stale in any::<u64>().prop_map(|v| v >> 1),
        gains in prop::array::uniform4(finite()),
        faults in prop::array::uniform3(0.0..1.0f64),
        seed in any::<u64>().prop_map(|v| v >> 1),
        q0 in prop::collection::vec(finite(), 0..8),
        chain in prop::option::of("[a-z]{1,8}\\.dh"),
        ui in prop::option::of("[0-9.]{1,15}:[0-9]{1,5}"),
        listen in prop::option::of(":[0-9]{1,5}"),
        box_lo in prop::array::uniform3(finite()),
        speeds in prop::collection::vec(0.0..10.0f64, 0..8),
    ) -> AppConfig {
        let mut c = AppConfig {
            role,
            device,
            tick_rate_hz: tick,
            report_rate_hz: report,
            stale_after_ms: stale,
            seed,
            q0,
            chain: chain.map(PathBuf::from),
            ..AppConfig::default()
        };
        c.gains.alpha = gains[0];
        c.gains.lambda = gains[1];
        c.gains.eta = gains[2];
        c.gains.limit_gain = gains[3];
        c.faults.fixed_delay_ms = faults[0] * 500.0;
        c.faults.jitter_ms = faults[1] * 50.0;
        c.faults.drop_rate = faults[2];
        c.endpoints.ui = ui;
        c.endpoints.follower_listen = listen;
        c.workspace.min = box_lo;
        c.servo.max_speed = speeds.into();
        c
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parse_inverts_serialize(c in config()) {
        let text = c.to_toml();
        let back: AppConfig = text.parse().unwrap_or_else(|e| panic!("{e}\n{text}"));
        prop_assert_eq!(back, c);
    }
}

#[test]
fn documented_example_parses() {
    let text = r#"
role = "follower"
tick_rate_hz = 100.0
device = "serial:/dev/ttyUSB0"
seed = 7

[endpoints]
follower_connect = "relay.example.org:7002"
ui = "127.0.0.1:8080"

[gains]
alpha = 0.999
lambda = 0.01
eta = 4.0

[faults]
fixed_delay_ms = 150.0
"#;
    let c: AppConfig = text.parse().unwrap();
    c.validate().unwrap();
    assert_eq!(c.device, DeviceSpec::Serial("/dev/ttyUSB0".into()));
    assert_eq!(c.faults.fixed_delay_ms, 150.0);
    assert_eq!(c.endpoints.relay_leader, ":7001");
    assert_eq!(c.to_toml().parse::<AppConfig>().unwrap(), c);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!("[gains]\nalpah = 0.5\n".parse::<AppConfig>().is_err());
    assert!("[endpoints]\nleader = \"x\"\n".parse::<AppConfig>().is_err());
}
