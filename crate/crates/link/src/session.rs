//! Real-time follower loop: network session, local commands, controller and
//! device on one fixed-period schedule.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use telearm_core::DevicePort;
use thiserror::Error;

use crate::connection::Connection;
use crate::faults::LinkFaults;
use crate::follower::{Follower, FollowerError, FollowerTick};
use crate::frame::Payload;
use crate::queue::BoundedQueue;
use crate::relay::normalize_addr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FollowerEndpoint {
    /// Outbound connection, typically to a relay's follower port.
    Connect(String),
    /// Accept leaders directly.
    Listen(String),
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("bad endpoint {0}")]
    Endpoint(String),
    #[error(transparent)]
    Follower(#[from] FollowerError),
}

pub struct ServeOptions {
    pub period: Duration,
    /// Faults applied to frames the follower sends.
    pub faults: Option<(LinkFaults, u64)>,
    pub shutdown: Arc<AtomicBool>,
    /// Commands from a local UI, applied without session checks.
    pub local: Option<Arc<BoundedQueue<LocalCommand>>>,
}

/// Input that bypasses the network session.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalCommand {
    /// A `JointTarget` or `PoseTarget` payload.
    Target(Payload),
    Gripper(f64),
}

impl ServeOptions {
    pub fn new(period: Duration, shutdown: Arc<AtomicBool>) -> Self {
        Self { period, faults: None, shutdown, local: None }
    }
}

/// What the observer sees after every tick.
pub struct TickContext<'a> {
    /// Microseconds since the loop started.
    pub now_us: u64,
    /// Wall-clock lateness of this tick relative to its schedule.
    pub lateness: Duration,
    pub connected: bool,
    pub tick: &'a FollowerTick,
}

enum Link {
    Connect { addr: SocketAddr, next_attempt: Instant },
    Listen(TcpListener),
}

impl Link {
    fn open(endpoint: &FollowerEndpoint) -> Result<Self, ServeError> {
        match endpoint {
            FollowerEndpoint::Connect(a) => {
                let addr = normalize_addr(a)
                    .to_socket_addrs()
                    .ok()
                    .and_then(|mut it| it.next())
                    .ok_or_else(|| ServeError::Endpoint(a.clone()))?;
                Ok(Link::Connect { addr, next_attempt: Instant::now() })
            }
            FollowerEndpoint::Listen(a) => {
                let bind = normalize_addr(a);
                let l = TcpListener::bind(&bind).map_err(|source| ServeError::Bind { addr: bind.clone(), source })?;
                l.set_nonblocking(true).map_err(|source| ServeError::Bind { addr: bind, source })?;
                Ok(Link::Listen(l))
            }
        }
    }

    fn try_obtain(&mut self) -> Option<TcpStream> {
        match self {
            Link::Connect { addr, next_attempt } => {
                if Instant::now() < *next_attempt {
                    return None;
                }
                *next_attempt = Instant::now() + Duration::from_millis(200);
                TcpStream::connect_timeout(addr, Duration::from_millis(100)).ok()
            }
            Link::Listen(l) => {
                let (s, _) = l.accept().ok()?;
                s.set_nonblocking(false).ok()?;
                Some(s)
            }
        }
    }
}

/// Runs until `opts.shutdown` is set. Lost connections are re-established
/// (outbound) or re-accepted (listening); the robot keeps its last target
/// meanwhile.
pub fn serve_follower<D, F>(
    endpoint: &FollowerEndpoint,
    follower: &mut Follower<D>,
    opts: &ServeOptions,
    mut observer: F,
) -> Result<(), ServeError>
where
    D: DevicePort,
    F: FnMut(&Follower<D>, &TickContext<'_>),
{
    let mut link = Link::open(endpoint)?;
    let mut conn: Option<Connection> = None;
    let origin = Instant::now();
    let period_s = opts.period.as_secs_f64();
    let mut deadline = origin;

    while !opts.shutdown.load(Ordering::SeqCst) {
        let now_us = origin.elapsed().as_micros() as u64;
        let lateness = Instant::now().saturating_duration_since(deadline);

        if conn.as_ref().is_none_or(Connection::is_finished) {
            conn = link.try_obtain().and_then(|s| Connection::new(s, opts.faults).ok());
        }
        if let Some(c) = &conn {
            while let Some(frame) = c.try_recv() {
                for reply in follower.handle(frame, now_us) {
                    c.send(reply);
                }
            }
        }
        if let Some(local) = &opts.local {
            while let Some(cmd) = local.try_pop() {
                match cmd {
                    LocalCommand::Target(p) => {
                        follower.apply_target(p);
                    }
                    LocalCommand::Gripper(g) => follower.set_gripper(g),
                }
            }
        }

        let tick = follower.tick(now_us, period_s)?;
        if let (Some(c), Some(report)) = (&conn, &tick.report) {
            c.send(report.clone());
        }
        observer(follower, &TickContext { now_us, lateness, connected: conn.is_some(), tick: &tick });

        deadline += opts.period;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        } else if now - deadline > 10 * opts.period {
            // Far behind (suspended, debugger): resynchronize instead of bursting.
            deadline = now;
        }
    }
    if let Some(c) = conn {
        c.close();
    }
    Ok(())
}
