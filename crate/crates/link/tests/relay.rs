//! Relay behavior over loopback TCP.

use std::io::{BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use telearm_link::frame::{encode, read_raw, Payload, TeleopFrame};
use telearm_link::relay::{run_relay, RelayConfig};
use telearm_link::LinkFaults;

fn loopback_relay(faults: LinkFaults) -> telearm_link::RelayHandle {
    run_relay(&RelayConfig {
        listen_leader: "127.0.0.1:0".into(),
        listen_follower: "127.0.0.1:0".into(),
        faults,
        ..RelayConfig::default()
    })
    .unwrap()
}

fn frames(n: u32, tag: u64) -> Vec<Vec<u8>> {
    (0..n)
        .map(|i| {
            let payload = match i % 3 {
                0 => Payload::Ping { nonce: tag ^ u64::from(i) },
                1 => Payload::JointTarget { q: vec![f64::from(i) * 1e-3; 5], gripper: 0.5 },
                _ => Payload::StateReport { q: vec![-f64::from(i); 5], gripper: 0.0 },
            };
            encode(&TeleopFrame { seq: i, t_send_us: u64::from(i) * 20_000, payload }).unwrap()
        })
        .collect()
}

fn read_n(stream: TcpStream, n: usize) -> Vec<Vec<u8>> {
    let mut rd = BufReader::new(stream);
    (0..n).map(|_| read_raw(&mut rd).unwrap().expect("frame")).collect()
}

fn digest(chunks: &[Vec<u8>]) -> Vec<u8> {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    h.finalize().to_vec()
}

fn wait_paired(relay: &telearm_link::RelayHandle) {
    let t0 = Instant::now();
    while !relay.is_paired() {
        assert!(t0.elapsed() < Duration::from_secs(5), "relay never paired");
        thread::sleep(Duration::from_millis(2));
    }
}

#[test]
fn forwards_bytes_verbatim_in_both_directions() {
    let relay = loopback_relay(LinkFaults::none());
    let follower = TcpStream::connect(relay.follower_addr()).unwrap();
    let leader = TcpStream::connect(relay.leader_addr()).unwrap();
    wait_paired(&relay);

    let down = frames(500, 1);
    let up = frames(300, 2);
    let (f_rx, l_rx) = (follower.try_clone().unwrap(), leader.try_clone().unwrap());
    let got_down = thread::spawn(move || read_n(f_rx, 500));
    let got_up = thread::spawn(move || read_n(l_rx, 300));
    let (mut lw, mut fw) = (leader, follower);
    let d2 = down.clone();
    let w1 = thread::spawn(move || d2.iter().for_each(|b| lw.write_all(b).unwrap()));
    for b in &up {
        fw.write_all(b).unwrap();
    }
    w1.join().unwrap();

    let got_down = got_down.join().unwrap();
    let got_up = got_up.join().unwrap();
    assert_eq!(digest(&got_down), digest(&down));
    assert_eq!(digest(&got_up), digest(&up));
    assert_eq!(got_down, down);
}

#[test]
fn leader_frames_wait_for_the_follower() {
    let relay = loopback_relay(LinkFaults::none());
    let mut leader = TcpStream::connect(relay.leader_addr()).unwrap();
    let sent = frames(10, 3);
    for b in &sent {
        leader.write_all(b).unwrap();
    }
    thread::sleep(Duration::from_millis(100));
    let follower = TcpStream::connect(relay.follower_addr()).unwrap();
    assert_eq!(read_n(follower, 10), sent);
}

#[test]
fn unpaired_buffer_keeps_the_newest_256() {
    let relay = loopback_relay(LinkFaults::none());
    let mut leader = TcpStream::connect(relay.leader_addr()).unwrap();
    let sent = frames(300, 4);
    for b in &sent {
        leader.write_all(b).unwrap();
    }
    let t0 = Instant::now();
    while relay.unpaired_dropped().1 < 44 {
        assert!(t0.elapsed() < Duration::from_secs(5));
        thread::sleep(Duration::from_millis(5));
    }
    let follower = TcpStream::connect(relay.follower_addr()).unwrap();
    assert_eq!(read_n(follower, 256), sent[44..].to_vec());
    assert_eq!(relay.unpaired_dropped().1, 44);
}

#[test]
fn a_second_leader_is_turned_away() {
    let relay = loopback_relay(LinkFaults::none());
    let _first = TcpStream::connect(relay.leader_addr()).unwrap();
    let _f = TcpStream::connect(relay.follower_addr()).unwrap();
    wait_paired(&relay);
    let mut second = TcpStream::connect(relay.leader_addr()).unwrap();
    second.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buf = [0u8; 1];
    assert_eq!(second.read(&mut buf).unwrap_or(0), 0);
    assert_eq!(relay.stats().rejected_connections.load(std::sync::atomic::Ordering::Relaxed), 1);
}

#[test]
fn a_new_follower_can_take_over_after_disconnect() {
    let relay = loopback_relay(LinkFaults::none());
    let mut leader = TcpStream::connect(relay.leader_addr()).unwrap();
    let first = TcpStream::connect(relay.follower_addr()).unwrap();
    wait_paired(&relay);
    drop(first);
    let t0 = Instant::now();
    while relay.is_paired() {
        assert!(t0.elapsed() < Duration::from_secs(5));
        thread::sleep(Duration::from_millis(2));
    }
    let sent = frames(5, 5);
    for b in &sent {
        leader.write_all(b).unwrap();
    }
    let second = TcpStream::connect(relay.follower_addr()).unwrap();
    assert_eq!(read_n(second, 5), sent);
}

#[test]
fn injected_delay_is_measured_on_loopback() {
    let relay = loopback_relay(LinkFaults::delay_ms(150.0));
    let follower = TcpStream::connect(relay.follower_addr()).unwrap();
    let mut leader = TcpStream::connect(relay.leader_addr()).unwrap();
    wait_paired(&relay);
    let (tx, rx) = mpsc::channel();
    let reader = thread::spawn(move || {
        let mut rd = BufReader::new(follower);
        for _ in 0..20 {
            read_raw(&mut rd).unwrap().unwrap();
            tx.send(Instant::now()).unwrap();
        }
    });
    let mut sent_at = Vec::new();
    for b in frames(20, 6) {
        sent_at.push(Instant::now());
        leader.write_all(&b).unwrap();
        thread::sleep(Duration::from_millis(25));
    }
    reader.join().unwrap();
    for (s, r) in sent_at.iter().zip(rx.iter()) {
        let ms = (r - *s).as_secs_f64() * 1e3;
        assert!((150.0..=170.0).contains(&ms), "latency {ms} ms");
    }
}
