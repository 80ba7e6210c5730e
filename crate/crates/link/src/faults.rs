//! Deterministic fault injection: fixed delay, uniform jitter and random drops
//! with FIFO delivery.
//!
//! Delivery time of frame k is `max(send_k + delay + U(0, jitter), delivery_{k−1})`,
//! so jitter never reorders frames.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFaults {
    /// Milliseconds added to every frame.
    #[serde(default)]
    pub fixed_delay_ms: f64,
    /// Upper bound of the extra uniform delay, milliseconds.
    #[serde(default)]
    pub jitter_ms: f64,
    /// Probability in `[0, 1)` that a frame is dropped.
    #[serde(default)]
    pub drop_rate: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("delay and jitter must be finite and non-negative")]
    BadDelay,
    #[error("drop rate {0} outside [0, 1)")]
    BadDropRate(f64),
}

impl LinkFaults {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn delay_ms(ms: f64) -> Self {
        Self { fixed_delay_ms: ms, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FaultError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.fixed_delay_ms) || !ok(self.jitter_ms) {
            return Err(FaultError::BadDelay);
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(FaultError::BadDropRate(self.drop_rate));
        }
        Ok(())
    }

    pub fn is_passthrough(&self) -> bool {
        self.fixed_delay_ms == 0.0 && self.jitter_ms == 0.0 && self.drop_rate == 0.0
    }
}

/// Seeded delivery-time generator for one direction of a link.
#[derive(Debug, Clone)]
pub struct FaultSchedule {
    faults: LinkFaults,
    rng: ChaCha8Rng,
    last_delivery: Duration,
    dropped: u64,
}

impl FaultSchedule {
    pub fn new(faults: LinkFaults, seed: u64) -> Result<Self, FaultError> {
        faults.validate()?;
        Ok(Self { faults, rng: ChaCha8Rng::seed_from_u64(seed), last_delivery: Duration::ZERO, dropped: 0 })
    }

    /// Delivery time for a frame sent at `sent` (on any clock whose origin
    /// is shared by all calls), or `None` if it is dropped. Calls must come in
    /// send order.
    pub fn schedule(&mut self, sent: Duration) -> Option<Duration> {
        // Both draws happen for every frame so the jitter sequence does not
        // depend on which frames were dropped.
        let drop_draw: f64 = self.rng.random();
        let jitter_draw: f64 = self.rng.random();
        if drop_draw < self.faults.drop_rate {
            self.dropped += 1;
            return None;
        }
        let delay_ms = self.faults.fixed_delay_ms + jitter_draw * self.faults.jitter_ms;
        let at = (sent + Duration::from_secs_f64(delay_ms / 1000.0)).max(self.last_delivery);
        self.last_delivery = at;
        Some(at)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// A faulty one-way link on a simulated clock.
#[derive(Debug, Clone)]
pub struct SimLink<T> {
    schedule: FaultSchedule,
    in_flight: VecDeque<(Duration, T)>,
}

impl<T> SimLink<T> {
    pub fn new(faults: LinkFaults, seed: u64) -> Result<Self, FaultError> {
        Ok(Self { schedule: FaultSchedule::new(faults, seed)?, in_flight: VecDeque::new() })
    }

    pub fn send(&mut self, now: Duration, item: T) {
        if let Some(at) = self.schedule.schedule(now) {
            self.in_flight.push_back((at, item));
        }
    }

    /// Items due at or before `now`, in send order.
    pub fn receive(&mut self, now: Duration) -> Vec<T> {
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|(at, _)| *at <= now) {
            out.push(self.in_flight.pop_front().expect("front exists").1);
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn dropped(&self) -> u64 {
        self.schedule.dropped()
    }
}

/// Real-time delay line in front of a writer. A background thread holds each
/// chunk until its scheduled delivery instant, then writes it.
pub struct DelayedWriter {
    tx: Option<mpsc::Sender<(Instant, Vec<u8>)>>,
    origin: Instant,
    schedule: FaultSchedule,
    worker: Option<thread::JoinHandle<()>>,
}

impl DelayedWriter {
    pub fn new<W: Write + Send + 'static>(mut inner: W, faults: LinkFaults, seed: u64) -> Result<Self, FaultError> {
        let schedule = FaultSchedule::new(faults, seed)?;
        let (tx, rx) = mpsc::channel::<(Instant, Vec<u8>)>();
        let worker = thread::spawn(move || {
            for (at, bytes) in rx {
                let now = Instant::now();
                if at > now {
                    thread::sleep(at - now);
                }
                if inner.write_all(&bytes).and_then(|_| inner.flush()).is_err() {
                    break;
                }
            }
        });
        Ok(Self { tx: Some(tx), origin: Instant::now(), schedule, worker: Some(worker) })
    }

    /// Queues one frame. Returns `false` when it was dropped by the schedule
    /// or the writer thread has stopped.
    pub fn send(&mut self, bytes: Vec<u8>) -> bool {
        let now = Instant::now();
        let Some(at) = self.schedule.schedule(now - self.origin) else {
            return false;
        };
        self.tx.as_ref().is_some_and(|tx| tx.send((self.origin + at, bytes)).is_ok())
    }

    pub fn dropped(&self) -> u64 {
        self.schedule.dropped()
    }
}

impl Drop for DelayedWriter {
    fn drop(&mut self) {
        // Closing the channel lets the worker flush what is queued and exit.
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
