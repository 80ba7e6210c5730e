//! A framed TCP connection: a reader thread and a writer thread joined to the
//! session through bounded queues.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::faults::{DelayedWriter, LinkFaults};
use crate::frame::{decode, encode, read_raw, TeleopFrame};
use crate::queue::{BoundedQueue, DEFAULT_CAPACITY};

#[derive(Debug, Default)]
pub struct ConnectionStats {
    pub frames_in: AtomicU64,
    pub frames_out: AtomicU64,
    pub bad_frames: AtomicU64,
}

pub struct Connection {
    stream: TcpStream,
    inbound: Arc<BoundedQueue<TeleopFrame>>,
    outbound: Arc<BoundedQueue<TeleopFrame>>,
    stats: Arc<ConnectionStats>,
    reader: Option<thread::JoinHandle<()>>,
    writer: Option<thread::JoinHandle<()>>,
}

impl Connection {
    /// Outgoing frames pass through `faults` (seeded by `seed`) when given.
    pub fn new(stream: TcpStream, faults: Option<(LinkFaults, u64)>) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let inbound = Arc::new(BoundedQueue::new(DEFAULT_CAPACITY));
        let outbound = Arc::new(BoundedQueue::new(DEFAULT_CAPACITY));
        let stats = Arc::new(ConnectionStats::default());

        let reader = {
            let mut rd = BufReader::new(stream.try_clone()?);
            let (inbound, stats) = (Arc::clone(&inbound), Arc::clone(&stats));
            thread::spawn(move || {
                while let Ok(Some(bytes)) = read_raw(&mut rd) {
                    match decode(&bytes) {
                        Ok((frame, _)) => {
                            stats.frames_in.fetch_add(1, Ordering::Relaxed);
                            let droppable = frame.payload.is_droppable();
                            if !inbound.push(frame, droppable) {
                                break;
                            }
                        }
                        Err(_) => {
                            stats.bad_frames.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
                inbound.close();
            })
        };

        let writer = {
            let ws = stream.try_clone()?;
            let (outbound, stats) = (Arc::clone(&outbound), Arc::clone(&stats));
            let mut sink: Box<dyn FnMut(Vec<u8>) -> bool + Send> = match faults {
                Some((f, seed)) if !f.is_passthrough() => {
                    let mut dw =
                        DelayedWriter::new(ws, f, seed).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
                    Box::new(move |b| {
                        dw.send(b);
                        true
                    })
                }
                _ => {
                    let mut w = BufWriter::new(ws);
                    Box::new(move |b| w.write_all(&b).and_then(|_| w.flush()).is_ok())
                }
            };
            thread::spawn(move || {
                while !outbound.is_closed() || !outbound.is_empty() {
                    let Some(frame) = outbound.pop_timeout(Duration::from_millis(50)) else { continue };
                    let Ok(bytes) = encode(&frame) else { continue };
                    if !sink(bytes) {
                        break;
                    }
                    stats.frames_out.fetch_add(1, Ordering::Relaxed);
                }
                outbound.close();
            })
        };

        Ok(Self { stream, inbound, outbound, stats, reader: Some(reader), writer: Some(writer) })
    }

    pub fn connect(addr: &str, faults: Option<(LinkFaults, u64)>) -> io::Result<Self> {
        Self::new(TcpStream::connect(addr)?, faults)
    }

    /// Queues a frame; `false` once the connection is closing.
    pub fn send(&self, frame: TeleopFrame) -> bool {
        let droppable = frame.payload.is_droppable();
        self.outbound.push(frame, droppable)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<TeleopFrame> {
        self.inbound.pop_timeout(timeout)
    }

    pub fn try_recv(&self) -> Option<TeleopFrame> {
        self.inbound.try_pop()
    }

    /// The peer closed the stream and everything it sent has been read.
    pub fn is_finished(&self) -> bool {
        self.inbound.is_closed() && self.inbound.is_empty()
    }

    pub fn stats(&self) -> &ConnectionStats {
        &self.stats
    }

    pub fn peer(&self) -> io::Result<std::net::SocketAddr> {
        self.stream.peer_addr()
    }

    /// Flushes queued output, then closes both directions.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.outbound.close();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        let _ = self.stream.shutdown(Shutdown::Both);
        self.inbound.close();
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.shutdown();
    }
}
