use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use telearm::commands::{run_sim, RunOptions, SimOptions};
use telearm::config::AppConfig;
use telearm_core::master::Workspace;
use tungstenite::{Message, WebSocket};

type Client = WebSocket<TcpStream>;

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn connect(port: u16) -> Client {
    let end = Instant::now() + Duration::from_secs(10);
    loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(s) => {
                s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
                let (ws, _) = tungstenite::client(format!("ws://127.0.0.1:{port}/"), s).unwrap();
                return ws;
            }
            Err(e) if Instant::now() > end => panic!("ui bridge never came up: {e}"),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn next_json(ws: &mut Client) -> Value {
    loop {
        match ws.read().expect("bridge message") {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            Message::Close(_) => panic!("bridge closed the connection"),
            _ => {}
        }
    }
}

/// Reads until a message satisfies `pred`, failing after `limit`.
fn until(ws: &mut Client, limit: Duration, pred: impl Fn(&Value) -> bool) -> Value {
    let end = Instant::now() + limit;
    loop {
        assert!(Instant::now() < end, "condition not met within {limit:?}");
        let v = next_json(ws);
        if pred(&v) {
            return v;
        }
    }
}

fn send(ws: &mut Client, v: Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

#[test]
fn cockpit_protocol_against_a_live_simulation() {
    let port = free_port();
    let mut cfg = AppConfig::default();
    cfg.endpoints.ui = Some(format!("127.0.0.1:{port}"));
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = Arc::clone(&stop);
    let sim = thread::spawn(move || {
        let opts = SimOptions { realtime: true, ..SimOptions::default() };
        run_sim(&cfg, &opts, &RunOptions::default(), stop2)
    });

    // Handshake, then an immediate snapshot.
    let mut op = connect(port);
    let hello = next_json(&mut op);
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["role"], "operator");
    assert_eq!(hello["node"], "sim");
    assert_eq!(hello["dh"].as_array().unwrap().len(), 5);
    assert_eq!(hello["q_max"][0], json!(std::f64::consts::FRAC_PI_2));
    assert!(hello["workspace"]["min"].is_array());
    let first = next_json(&mut op);
    assert_eq!(first["type"], "state");
    for key in ["q", "gripper", "err_t", "err_r", "latency_ms", "seq"] {
        assert!(first.get(key).is_some(), "state lacks {key}");
    }

    // A second client watches but may not command.
    let mut viewer = connect(port);
    assert_eq!(next_json(&mut viewer)["role"], "read_only");
    assert_eq!(next_json(&mut viewer)["type"], "state");
    send(&mut viewer, json!({"type": "target_joints", "q": [0.5, 0, 0, 0, 0]}));
    let refusal = until(&mut viewer, Duration::from_secs(2), |v| v["type"] == "error");
    assert!(refusal["message"].as_str().unwrap().contains("read-only"));

    // State rate.
    let start = Instant::now();
    let mut seqs = Vec::new();
    while start.elapsed() < Duration::from_secs(1) {
        let v = next_json(&mut op);
        if v["type"] == "state" {
            seqs.push(v["seq"].as_u64().unwrap());
        }
    }
    assert!(seqs.len() >= 20, "{} states in one second", seqs.len());
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));

    // Malformed input gets an error frame and the connection survives;
    // unknown types are ignored.
    send(&mut op, json!({"type": "dance"}));
    op.send(Message::text("{not json")).unwrap();
    let err = until(&mut op, Duration::from_secs(2), |v| v["type"] == "error");
    assert!(err["message"].as_str().unwrap().starts_with("malformed JSON"));
    until(&mut op, Duration::from_secs(2), |v| v["type"] == "state");

    // An out-of-box pose is clamped and echoed within 200 ms.
    let ws = Workspace::default();
    send(&mut op, json!({"type": "mode", "mode": "task_space"}));
    let sent = Instant::now();
    send(&mut op, json!({"type": "target_pose", "t": [1.0, 0.0, 0.1], "rpy": [0, 0, 0], "gripper": 0.4}));
    let echoed = until(&mut op, Duration::from_secs(2), |v| v["target"]["type"] == "target_pose");
    assert!(sent.elapsed() < Duration::from_millis(200), "echo took {:?}", sent.elapsed());
    assert_eq!(echoed["target"]["t"], json!([ws.max[0], 0.0, 0.1]));
    assert_eq!(echoed["mode"], "task_space");

    // Joint targets are tracked.
    send(&mut op, json!({"type": "target_joints", "q": [0.3, 0, 0, 0, 0]}));
    let reached = until(&mut op, Duration::from_secs(3), |v| {
        v["type"] == "state" && (v["q"][0].as_f64().unwrap() - 0.3).abs() < 1e-9
    });
    assert_eq!(reached["target"]["q"], json!([0.3, 0.0, 0.0, 0.0, 0.0]));
    send(&mut op, json!({"type": "gripper", "value": 1.0}));
    until(&mut op, Duration::from_secs(3), |v| v["type"] == "state" && v["gripper"] == json!(1.0));

    // When the operator leaves, the next client to connect may command.
    drop(op);
    drop(viewer);
    thread::sleep(Duration::from_millis(100));
    let mut next = connect(port);
    assert_eq!(next_json(&mut next)["role"], "operator");

    stop.store(true, Ordering::SeqCst);
    let summary = sim.join().unwrap().unwrap();
    assert_eq!(summary.final_q[0], 0.3);
    assert!(summary.max_lateness_ms < 20.0 * 10.0, "lateness {} ms", summary.max_lateness_ms);
}
