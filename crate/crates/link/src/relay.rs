//! Relay gateway: pairs one leader connection with one follower connection
//! and forwards whole frames verbatim, FIFO per direction.
//!
//! Frames for an absent peer wait in that peer's outbox (256 frames, oldest
//! dropped first). Faults, when configured, delay or drop frames in the
//! leader-to-follower direction.

use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::faults::{FaultSchedule, LinkFaults};
use crate::frame::read_raw;
use crate::queue::{BoundedQueue, DEFAULT_CAPACITY};

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub listen_leader: String,
    pub listen_follower: String,
    pub faults: LinkFaults,
    pub seed: u64,
    pub buffer: usize,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            listen_leader: "127.0.0.1:7001".into(),
            listen_follower: "127.0.0.1:7002".into(),
            faults: LinkFaults::none(),
            seed: 0,
            buffer: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Default)]
pub struct DirectionStats {
    pub frames: AtomicU64,
    pub bytes: AtomicU64,
    pub fault_dropped: AtomicU64,
}

#[derive(Debug, Default)]
pub struct RelayStats {
    pub to_follower: DirectionStats,
    pub to_leader: DirectionStats,
    pub rejected_connections: AtomicU64,
    pub leader_sessions: AtomicU64,
    pub follower_sessions: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Leader,
    Follower,
}

struct Endpoint {
    /// Frames waiting to be written to this side, with their release instant.
    outbox: BoundedQueue<(Instant, Vec<u8>)>,
    connected: AtomicBool,
    /// Bumped on every new connection so a stale writer knows to stop.
    generation: AtomicU64,
}

impl Endpoint {
    fn new(capacity: usize) -> Self {
        Self { outbox: BoundedQueue::new(capacity), connected: AtomicBool::new(false), generation: AtomicU64::new(0) }
    }
}

struct Shared {
    leader: Endpoint,
    follower: Endpoint,
    stats: RelayStats,
    /// Leader → follower schedule; one instance so the FIFO rule spans the
    /// whole direction.
    schedule: Mutex<FaultSchedule>,
    origin: Instant,
    shutdown: AtomicBool,
}

impl Shared {
    fn endpoint(&self, side: Side) -> &Endpoint {
        match side {
            Side::Leader => &self.leader,
            Side::Follower => &self.follower,
        }
    }
}

pub struct RelayHandle {
    leader_addr: SocketAddr,
    follower_addr: SocketAddr,
    shared: Arc<Shared>,
    acceptors: Vec<thread::JoinHandle<()>>,
}

impl RelayHandle {
    pub fn leader_addr(&self) -> SocketAddr {
        self.leader_addr
    }

    pub fn follower_addr(&self) -> SocketAddr {
        self.follower_addr
    }

    pub fn stats(&self) -> &RelayStats {
        &self.shared.stats
    }

    /// Frames dropped while waiting for an absent peer, per destination.
    pub fn unpaired_dropped(&self) -> (u64, u64) {
        (self.shared.leader.outbox.dropped(), self.shared.follower.outbox.dropped())
    }

    pub fn is_paired(&self) -> bool {
        self.shared.leader.connected.load(Ordering::SeqCst) && self.shared.follower.connected.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.leader.outbox.close();
        self.shared.follower.outbox.close();
        for a in self.acceptors.drain(..) {
            let _ = a.join();
        }
    }
}

impl Drop for RelayHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds both listeners and starts serving in the background.
pub fn run_relay(cfg: &RelayConfig) -> io::Result<RelayHandle> {
    let schedule =
        FaultSchedule::new(cfg.faults, cfg.seed).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let shared = Arc::new(Shared {
        leader: Endpoint::new(cfg.buffer),
        follower: Endpoint::new(cfg.buffer),
        stats: RelayStats::default(),
        schedule: Mutex::new(schedule),
        origin: Instant::now(),
        shutdown: AtomicBool::new(false),
    });
    let ll = TcpListener::bind(normalize_addr(&cfg.listen_leader))?;
    let fl = TcpListener::bind(normalize_addr(&cfg.listen_follower))?;
    let (leader_addr, follower_addr) = (ll.local_addr()?, fl.local_addr()?);
    let acceptors = vec![
        spawn_acceptor(ll, Side::Leader, Arc::clone(&shared))?,
        spawn_acceptor(fl, Side::Follower, Arc::clone(&shared))?,
    ];
    Ok(RelayHandle { leader_addr, follower_addr, shared, acceptors })
}

/// `:7001` means every interface.
pub fn normalize_addr(addr: &str) -> String {
    if addr.starts_with(':') {
        format!("0.0.0.0{addr}")
    } else {
        addr.to_string()
    }
}

fn spawn_acceptor(listener: TcpListener, side: Side, shared: Arc<Shared>) -> io::Result<thread::JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !shared.shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let ep = shared.endpoint(side);
                    if ep.connected.swap(true, Ordering::SeqCst) {
                        // Single operator, single robot: a second peer is turned away.
                        shared.stats.rejected_connections.fetch_add(1, Ordering::Relaxed);
                        let _ = stream.shutdown(Shutdown::Both);
                        continue;
                    }
                    let counter = match side {
                        Side::Leader => &shared.stats.leader_sessions,
                        Side::Follower => &shared.stats.follower_sessions,
                    };
                    counter.fetch_add(1, Ordering::Relaxed);
                    serve_peer(stream, side, Arc::clone(&shared));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        }
    }))
}

fn serve_peer(stream: TcpStream, side: Side, shared: Arc<Shared>) {
    let _ = stream.set_nodelay(true);
    let generation = shared.endpoint(side).generation.fetch_add(1, Ordering::SeqCst) + 1;
    let Ok(read_half) = stream.try_clone() else {
        shared.endpoint(side).connected.store(false, Ordering::SeqCst);
        return;
    };

    // Writer: drains this side's outbox.
    {
        let shared = Arc::clone(&shared);
        let mut out = stream;
        thread::spawn(move || {
            let ep = shared.endpoint(side);
            let dir = match side {
                Side::Leader => &shared.stats.to_leader,
                Side::Follower => &shared.stats.to_follower,
            };
            let current = || ep.generation.load(Ordering::SeqCst) == generation && ep.connected.load(Ordering::SeqCst);
            while current() {
                let Some((at, bytes)) = ep.outbox.pop_timeout(Duration::from_millis(20)) else {
                    if ep.outbox.is_closed() {
                        break;
                    }
                    continue;
                };
                if !current() {
                    // Superseded while waiting: the frame belongs to the next connection.
                    ep.outbox.push_front((at, bytes), true);
                    break;
                }
                let now = Instant::now();
                if at > now {
                    thread::sleep(at - now);
                }
                if out.write_all(&bytes).is_err() {
                    break;
                }
                dir.frames.fetch_add(1, Ordering::Relaxed);
                dir.bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);
            }
            let _ = out.shutdown(Shutdown::Both);
        });
    }

    // Reader: frames go to the other side's outbox.
    thread::spawn(move || {
        let mut rd = BufReader::new(read_half);
        let peer = match side {
            Side::Leader => Side::Follower,
            Side::Follower => Side::Leader,
        };
        while let Ok(Some(bytes)) = read_raw(&mut rd) {
            let now = Instant::now();
            let release = if side == Side::Leader {
                let at = shared.schedule.lock().expect("schedule lock").schedule(now - shared.origin);
                match at {
                    Some(at) => shared.origin + at,
                    None => {
                        shared.stats.to_follower.fault_dropped.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                }
            } else {
                now
            };
            // A connected peer gets backpressure; an absent one a bounded
            // buffer that sheds its oldest frames.
            let dest = shared.endpoint(peer);
            let mut item = (release, bytes);
            loop {
                if dest.outbox.is_closed() {
                    return;
                }
                if !dest.connected.load(Ordering::SeqCst) {
                    dest.outbox.push(item, true);
                    break;
                }
                match dest.outbox.push_wait(item, true, Duration::from_millis(20)) {
                    Ok(()) => break,
                    Err(back) => item = back,
                }
            }
        }
        let ep = shared.endpoint(side);
        if ep.generation.load(Ordering::SeqCst) == generation {
            ep.connected.store(false, Ordering::SeqCst);
        }
    });
}
