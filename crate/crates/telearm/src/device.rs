//! Robot back ends: the in-process simulator, the serial protocol over any
//! byte stream, a firmware emulator that speaks it, and a termios port.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, ErrorKind, Read, Write};
use std::os::fd::AsRawFd;
use std::os::unix::fs::OpenOptionsExt;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use telearm_core::master::PotReading;
use telearm_core::serialio::{self, SerialFrame, StreamDecoder, SERVO_CHANNELS};
use telearm_core::{DHChain, DeviceError, DevicePort, JointVector, RobotState, ServoModel, SimRobot};

use crate::config::DeviceSpec;

/// How long a serial device may take to answer `GET_STATE`.
pub const REPLY_TIMEOUT: Duration = Duration::from_millis(500);

/// Host side of the serial protocol over any byte stream. Reads returning
/// `Ok(0)`, `WouldBlock` or `TimedOut` mean "nothing yet".
pub struct SerialDevice<P> {
    port: P,
    name: String,
    decoder: StreamDecoder,
    timeout: Duration,
    origin: Instant,
    last: Option<RobotState>,
    states: u64,
    pots: Option<PotReading>,
    pot_frames: u64,
}

impl<P: Read + Write + Send> SerialDevice<P> {
    pub fn new(port: P, name: impl Into<String>, timeout: Duration) -> Self {
        Self {
            port,
            name: name.into(),
            decoder: StreamDecoder::new(),
            timeout,
            origin: Instant::now(),
            last: None,
            states: 0,
            pots: None,
            pot_frames: 0,
        }
    }

    pub fn port(&self) -> &P {
        &self.port
    }

    pub fn decoder_stats(&self) -> serialio::DecoderStats {
        self.decoder.stats()
    }

    /// One read from the port; returns whether any bytes arrived.
    fn pump(&mut self) -> Result<bool, DeviceError> {
        let mut buf = [0u8; 256];
        let n = match self.port.read(&mut buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => 0,
            Err(e) => return Err(e.into()),
        };
        self.decoder.push(&buf[..n]);
        for frame in self.decoder.drain_frames() {
            match frame {
                SerialFrame::State { servos } => {
                    let (q, gripper) = serialio::servo_values(&servos);
                    let t_sim = self.origin.elapsed().as_secs_f64();
                    self.last = Some(RobotState { q: q.to_vec().into(), gripper, t_sim });
                    self.states += 1;
                }
                SerialFrame::Pots { counts } => {
                    if let Ok(r) = PotReading::new(counts) {
                        self.pots = Some(r);
                        self.pot_frames += 1;
                    }
                }
                // Host-bound frames never come back; ignore echoes.
                SerialFrame::SetTargets { .. } | SerialFrame::GetState => {}
            }
        }
        Ok(n > 0)
    }

    fn send(&mut self, frames: &[SerialFrame]) -> Result<(), DeviceError> {
        let mut bytes = Vec::new();
        for f in frames {
            bytes.extend(serialio::encode(f).map_err(|e| DeviceError::Protocol(e.to_string()))?);
        }
        self.port.write_all(&bytes)?;
        self.port.flush()?;
        Ok(())
    }

    fn await_state(&mut self) -> Result<RobotState, DeviceError> {
        let seen = self.states;
        let deadline = Instant::now() + self.timeout;
        while self.states == seen {
            if Instant::now() >= deadline {
                return Err(DeviceError::Timeout(self.timeout));
            }
            if !self.pump()? {
                thread::yield_now();
            }
        }
        Ok(self.last.clone().expect("a state frame was decoded"))
    }

    /// Polls the device without commanding anything.
    pub fn request_state(&mut self) -> Result<RobotState, DeviceError> {
        self.send(&[SerialFrame::GetState])?;
        self.await_state()
    }

    /// Waits up to `wait` for a fresh `POTS` frame.
    pub fn read_pots(&mut self, wait: Duration) -> Result<Option<PotReading>, DeviceError> {
        let seen = self.pot_frames;
        let deadline = Instant::now() + wait;
        loop {
            let got = self.pump()?;
            if self.pot_frames != seen {
                return Ok(self.pots);
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
            if !got {
                thread::sleep(Duration::from_millis(1));
            }
        }
    }
}

impl<P: Read + Write + Send> DevicePort for SerialDevice<P> {
    fn exchange(&mut self, q: &[f64], gripper: f64, _dt: f64) -> Result<RobotState, DeviceError> {
        if q.len() != SERVO_CHANNELS - 1 {
            return Err(DeviceError::Protocol(format!(
                "serial devices drive {} joints, got {}",
                SERVO_CHANNELS - 1,
                q.len()
            )));
        }
        self.send(&[SerialFrame::set_targets(q, gripper), SerialFrame::GetState])?;
        self.await_state()
    }

    fn pots(&mut self) -> Option<PotReading> {
        let _ = self.pump();
        self.pots
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Servo-controller firmware in software: answers `GET_STATE` after
/// advancing a [`SimRobot`] by a fixed step, optionally followed by `POTS`.
pub struct FirmwareEmulator {
    robot: SimRobot,
    target: (Vec<f64>, f64),
    step: f64,
    decoder: StreamDecoder,
    out: VecDeque<u8>,
    pots: Option<PotReading>,
}

impl FirmwareEmulator {
    pub fn new(robot: SimRobot, step: f64) -> Self {
        let s = robot.state();
        let target = (s.q.to_vec(), s.gripper);
        Self { robot, target, step, decoder: StreamDecoder::new(), out: VecDeque::new(), pots: None }
    }

    /// Sends `r` after every state reply.
    pub fn with_pots(mut self, r: PotReading) -> Self {
        self.pots = Some(r);
        self
    }

    pub fn set_pots(&mut self, r: PotReading) {
        self.pots = Some(r);
    }

    pub fn robot(&self) -> &SimRobot {
        &self.robot
    }

    fn emit(&mut self, f: &SerialFrame) {
        self.out.extend(serialio::encode(f).expect("emulator frames are in range"));
    }
}

impl Write for FirmwareEmulator {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.decoder.push(buf);
        for frame in self.decoder.drain_frames() {
            match frame {
                SerialFrame::SetTargets { servos } => {
                    let (q, g) = serialio::servo_values(&servos);
                    self.target = (q.to_vec(), g);
                }
                SerialFrame::GetState => {
                    let s = self.robot.step(&self.target.0, self.target.1, self.step).clone();
                    self.emit(&SerialFrame::state(&s.q, s.gripper));
                    if let Some(p) = self.pots {
                        self.emit(&p.into());
                    }
                }
                SerialFrame::State { .. } | SerialFrame::Pots { .. } => {}
            }
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for FirmwareEmulator {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = buf.len().min(self.out.len());
        for (b, v) in buf.iter_mut().zip(self.out.drain(..n)) {
            *b = v;
        }
        Ok(n)
    }
}

/// A serial port in raw 8N1 mode at the protocol baud rate. Reads return
/// `Ok(0)` after 100 ms without data.
pub struct TtyPort(File);

impl TtyPort {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        // Non-blocking open so a missing carrier cannot hang us.
        let file =
            OpenOptions::new().read(true).write(true).custom_flags(libc::O_NOCTTY | libc::O_NONBLOCK).open(path)?;
        let fd = file.as_raw_fd();
        // SAFETY: `fd` is open for the lifetime of `file`; termios is plain
        // data filled in by tcgetattr before use.
        unsafe {
            let mut t: libc::termios = std::mem::zeroed();
            if libc::tcgetattr(fd, &mut t) != 0 {
                return Err(io::Error::last_os_error());
            }
            libc::cfmakeraw(&mut t);
            t.c_cflag &= !(libc::PARENB | libc::CSTOPB | libc::CSIZE | libc::CRTSCTS);
            t.c_cflag |= libc::CS8 | libc::CLOCAL | libc::CREAD;
            t.c_cc[libc::VMIN] = 0;
            t.c_cc[libc::VTIME] = 1;
            if libc::cfsetispeed(&mut t, libc::B115200) != 0 || libc::cfsetospeed(&mut t, libc::B115200) != 0 {
                return Err(io::Error::last_os_error());
            }
            if libc::tcsetattr(fd, libc::TCSANOW, &t) != 0 {
                return Err(io::Error::last_os_error());
            }
            let flags = libc::fcntl(fd, libc::F_GETFL);
            if flags < 0 || libc::fcntl(fd, libc::F_SETFL, flags & !libc::O_NONBLOCK) < 0 {
                return Err(io::Error::last_os_error());
            }
            libc::tcflush(fd, libc::TCIOFLUSH);
        }
        Ok(Self(file))
    }
}

impl Read for TtyPort {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.0.read(buf)
    }
}

impl Write for TtyPort {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

/// Opens the configured back end and returns it with the posture it is in.
/// Physical devices are asked for their state rather than commanded to `q0`.
pub fn open_device(
    spec: &DeviceSpec,
    chain: &DHChain,
    servo: &ServoModel,
    q0: &[f64],
    period: f64,
) -> Result<(Box<dyn DevicePort>, JointVector), DeviceError> {
    let serial_dof = SERVO_CHANNELS - 1;
    if !matches!(spec, DeviceSpec::Sim) && chain.dof() != serial_dof {
        return Err(DeviceError::Protocol(format!(
            "serial devices drive {serial_dof} joints, the chain has {}",
            chain.dof()
        )));
    }
    match spec {
        DeviceSpec::Sim => Ok((Box::new(SimRobot::new(chain.clone(), servo.clone(), q0)), chain.clamp(q0))),
        DeviceSpec::Emulated => {
            let fw = FirmwareEmulator::new(SimRobot::new(chain.clone(), servo.clone(), q0), period);
            let mut dev = SerialDevice::new(fw, "emulated", REPLY_TIMEOUT);
            let q = dev.request_state()?.q;
            Ok((Box::new(dev), q))
        }
        DeviceSpec::Serial(path) => {
            let port = TtyPort::open(path)?;
            let mut dev = SerialDevice::new(port, format!("serial:{path}"), REPLY_TIMEOUT);
            let q = dev.request_state()?.q;
            Ok((Box::new(dev), q))
        }
    }
}
