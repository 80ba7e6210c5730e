//! Bounded FIFO with drop-oldest backpressure for superseded items.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub const DEFAULT_CAPACITY: usize = 256;

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<(T, bool)>,
    closed: bool,
    dropped: u64,
}

/// When full, a push evicts the oldest droppable item. Items pushed as
/// non-droppable are never evicted; if nothing is droppable the queue grows
/// past capacity rather than lose them.
#[derive(Debug)]
pub struct BoundedQueue<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
    space: Condvar,
    capacity: usize,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            inner: Mutex::new(Inner { items: VecDeque::new(), closed: false, dropped: 0 }),
            ready: Condvar::new(),
            space: Condvar::new(),
            capacity,
        }
    }

    /// Returns `false` once the queue is closed.
    pub fn push(&self, item: T, droppable: bool) -> bool {
        let mut g = self.inner.lock().expect("queue lock");
        if g.closed {
            return false;
        }
        if g.items.len() >= self.capacity {
            if let Some(i) = g.items.iter().position(|(_, d)| *d) {
                g.items.remove(i);
                g.dropped += 1;
            } else if droppable {
                g.dropped += 1;
                return true;
            }
        }
        g.items.push_back((item, droppable));
        self.ready.notify_one();
        true
    }

    /// Waits up to `timeout` for room instead of evicting. Hands the item
    /// back on timeout or when the queue is closed.
    pub fn push_wait(&self, item: T, droppable: bool, timeout: Duration) -> Result<(), T> {
        let deadline = Instant::now() + timeout;
        let mut g = self.inner.lock().expect("queue lock");
        while g.items.len() >= self.capacity {
            let now = Instant::now();
            if g.closed || now >= deadline {
                return Err(item);
            }
            g = self.space.wait_timeout(g, deadline - now).expect("queue lock").0;
        }
        if g.closed {
            return Err(item);
        }
        g.items.push_back((item, droppable));
        self.ready.notify_one();
        Ok(())
    }

    /// Returns an item to the head of the queue, ignoring capacity.
    pub fn push_front(&self, item: T, droppable: bool) {
        let mut g = self.inner.lock().expect("queue lock");
        g.items.push_front((item, droppable));
        self.ready.notify_one();
    }

    /// Waits up to `timeout` for an item. `None` on timeout or when closed and
    /// drained.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let deadline = Instant::now() + timeout;
        let mut g = self.inner.lock().expect("queue lock");
        loop {
            if let Some((item, _)) = g.items.pop_front() {
                self.space.notify_one();
                return Some(item);
            }
            if g.closed {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            g = self.ready.wait_timeout(g, deadline - now).expect("queue lock").0;
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        let item = self.inner.lock().expect("queue lock").items.pop_front().map(|(t, _)| t);
        self.space.notify_one();
        item
    }

    pub fn drain(&self) -> Vec<T> {
        let items = self.inner.lock().expect("queue lock").items.drain(..).map(|(t, _)| t).collect();
        self.space.notify_all();
        items
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
        self.space.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("queue lock").closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().expect("queue lock").dropped
    }
}
