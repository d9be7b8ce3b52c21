//! Distributed execution over TCP.
//!
//! Every frame is a 4-byte big-endian payload length followed by one JSON
//! message. A run goes:
//!
//! 1. each device connects and sends `HELLO`;
//! 2. once all devices have joined, the cloudlet sends each one a `BROADCAST`
//!    with `t = 0`, which starts slot 1;
//! 3. per slot, every device sends `STATE_REPORT` and the cloudlet, after
//!    receiving all of them, answers each device with its `BROADCAST`.
//!
//! Both ends run the same agents as the in-process engine, so the outcome is
//! bitwise identical to [`offload_core::sim::run_episode`].

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use offload_core::sim::{Broadcast, CloudletAgent, DeviceAgent, Episode, Policy, RunOptions, Scenario, StateReport};
use serde::{Deserialize, Serialize};

/// Largest payload accepted from the network.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello { device_id: usize },
    StateReport(StateReport),
    Broadcast(Broadcast),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("empty payload at offset {offset}")]
    Empty { offset: usize },
    #[error("payload of {len} bytes exceeds the frame limit")]
    TooLarge { len: usize },
    #[error("malformed payload at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

/// Result of looking at the front of a byte stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    /// At least this many more bytes are needed.
    NeedMore(usize),
    Frame { message: Message, consumed: usize },
}

/// Frame an arbitrary payload.
pub fn frame_payload(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.is_empty() {
        return Err(FrameError::Empty { offset: 4 });
    }
    let len = u32::try_from(payload.len()).map_err(|_| FrameError::TooLarge { len: payload.len() })?;
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn encode_frame(message: &Message) -> Result<Vec<u8>, FrameError> {
    let payload = serde_json::to_vec(message).map_err(|e| FrameError::Malformed {
        offset: 4,
        reason: e.to_string(),
    })?;
    frame_payload(&payload)
}

/// Decode the first frame of `buf`. Never panics on arbitrary input.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded, FrameError> {
    if buf.len() < 4 {
        return Ok(Decoded::NeedMore(4 - buf.len()));
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len == 0 {
        return Err(FrameError::Empty { offset: 4 });
    }
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge { len });
    }
    if buf.len() < 4 + len {
        return Ok(Decoded::NeedMore(4 + len - buf.len()));
    }
    let payload = &buf[4..4 + len];
    let text = std::str::from_utf8(payload).map_err(|e| FrameError::Malformed {
        offset: 4 + e.valid_up_to(),
        reason: "payload is not UTF-8".into(),
    })?;
    let message = serde_json::from_str(text).map_err(|e| FrameError::Malformed {
        offset: 4 + byte_offset(text, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    Ok(Decoded::Frame {
        message,
        consumed: 4 + len,
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] offload_core::Error),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("peer closed the connection")]
    Closed,
}

/// A framed, buffered connection.
#[derive(Debug)]
pub struct Conn {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl Conn {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            buf: Vec::new(),
        })
    }

    pub fn send(&mut self, m: &Message) -> Result<(), WireError> {
        self.stream.write_all(&encode_frame(m)?)?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, WireError> {
        let mut chunk = [0u8; 16 << 10];
        loop {
            if let Decoded::Frame { message, consumed } = decode_frame(&self.buf)? {
                self.buf.drain(..consumed);
                return Ok(message);
            }
            let n = match self.stream.read(&mut chunk) {
                Ok(n) => n,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(WireError::Timeout("no message from peer".into()))
                }
                Err(e) => return Err(e.into()),
            };
            if n == 0 {
                return Err(WireError::Closed);
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    pub fn set_timeout(&self, t: Option<Duration>) -> std::io::Result<()> {
        self.stream.set_read_timeout(t)
    }
}

/// Timeouts of a distributed run.
#[derive(Debug, Clone, Copy)]
pub struct WireConfig {
    /// How long the cloudlet waits for every device to join, and devices for
    /// the cloudlet to accept.
    pub join_timeout: Duration,
    /// How long either side waits for the next message once running.
    pub slot_timeout: Duration,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            join_timeout: Duration::from_secs(30),
            slot_timeout: Duration::from_secs(60),
        }
    }
}

/// Cloudlet side of a finished or aborted run.
#[derive(Debug)]
pub struct CloudletRun {
    pub episode: Episode,
    /// The run stopped early because a device went away.
    pub partial: bool,
    pub error: Option<String>,
}

fn accept_all(listener: &TcpListener, n: usize, cfg: &WireConfig) -> Result<Vec<Conn>, WireError> {
    let mut conns: Vec<Option<Conn>> = (0..n).map(|_| None).collect();
    let deadline = Instant::now() + cfg.join_timeout;
    let mut joined = 0;
    listener.set_nonblocking(true)?;
    let result = (|| {
        while joined < n {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let mut c = Conn::new(stream)?;
                    let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
                    c.set_timeout(Some(left))?;
                    match c.recv()? {
                        Message::Hello { device_id } if device_id < n && conns[device_id].is_none() => {
                            conns[device_id] = Some(c);
                            joined += 1;
                        }
                        Message::Hello { device_id } => {
                            return Err(WireError::Protocol(format!("unexpected or duplicate device {device_id}")))
                        }
                        other => return Err(WireError::Protocol(format!("expected HELLO, got {other:?}"))),
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(WireError::Timeout(format!(
                            "{joined} of {n} devices joined; refusing to start slot 1"
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    })();
    listener.set_nonblocking(false)?;
    result?;
    let conns: Vec<Conn> = conns.into_iter().map(|c| c.expect("all joined")).collect();
    for c in &conns {
        c.set_timeout(Some(cfg.slot_timeout))?;
    }
    Ok(conns)
}

/// Serve one run on `listener`.
pub fn run_cloudlet(
    listener: &TcpListener,
    scenario: &Scenario,
    policy: Policy,
    seed: u64,
    options: RunOptions,
    cfg: &WireConfig,
) -> Result<CloudletRun, WireError> {
    let n = scenario.num_devices();
    let mut agent = CloudletAgent::new(scenario, policy, seed, options)?;
    let mut conns = accept_all(listener, n, cfg)?;
    let abort = |agent: CloudletAgent, msg: String| -> Result<CloudletRun, WireError> {
        Ok(CloudletRun {
            episode: agent.finish()?,
            partial: true,
            error: Some(msg),
        })
    };
    for (c, b) in conns.iter_mut().zip(agent.start()) {
        c.send(&Message::Broadcast(b))?;
    }
    let mut reports = Vec::with_capacity(n);
    for t in 1..=scenario.slots {
        reports.clear();
        for (i, c) in conns.iter_mut().enumerate() {
            match c.recv() {
                Ok(Message::StateReport(r)) => reports.push(r),
                Ok(other) => return Err(WireError::Protocol(format!("device {i}: expected STATE_REPORT, got {other:?}"))),
                Err(e) => return abort(agent, format!("device {i} lost before reporting slot {t}: {e}")),
            }
        }
        let out = agent.handle_slot(&reports)?;
        for (i, (c, b)) in conns.iter_mut().zip(out).enumerate() {
            if let Err(e) = c.send(&Message::Broadcast(b)) {
                return abort(agent, format!("device {i} lost after slot {t}: {e}"));
            }
        }
    }
    Ok(CloudletRun {
        episode: agent.finish()?,
        partial: false,
        error: None,
    })
}

fn connect(addr: &str, cfg: &WireConfig) -> Result<TcpStream, WireError> {
    let deadline = Instant::now() + cfg.join_timeout;
    loop {
        let last = match addr.to_socket_addrs()?.next() {
            Some(a) => match TcpStream::connect_timeout(&a, Duration::from_secs(1)) {
                Ok(s) => return Ok(s),
                Err(e) => e.to_string(),
            },
            None => return Err(WireError::Protocol(format!("{addr} resolves to nothing"))),
        };
        if Instant::now() >= deadline {
            return Err(WireError::Timeout(format!("cannot reach {addr}: {last}")));
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

/// Run device `device` of one run against the cloudlet at `addr`. Returns the
/// number of slots completed.
pub fn run_device(
    addr: &str,
    scenario: &Scenario,
    device: usize,
    policy: Policy,
    seed: u64,
    cfg: &WireConfig,
) -> Result<u64, WireError> {
    let mut agent = DeviceAgent::new(scenario, device, policy, seed)?;
    let mut conn = Conn::new(connect(addr, cfg)?)?;
    conn.send(&Message::Hello { device_id: device })?;
    // The start signal only comes once every device has joined.
    conn.set_timeout(Some(cfg.join_timeout + cfg.slot_timeout))?;
    let expect_broadcast = |conn: &mut Conn, t: u64| -> Result<Broadcast, WireError> {
        match conn.recv()? {
            Message::Broadcast(b) if b.t == t && b.device == device => Ok(b),
            other => Err(WireError::Protocol(format!("device {device}: expected BROADCAST for slot {t}, got {other:?}"))),
        }
    };
    agent.apply_broadcast(&expect_broadcast(&mut conn, 0)?)?;
    conn.set_timeout(Some(cfg.slot_timeout))?;
    for t in 1..=scenario.slots {
        let report = agent.begin_slot()?;
        conn.send(&Message::StateReport(report))?;
        agent.apply_broadcast(&expect_broadcast(&mut conn, t)?)?;
    }
    Ok(agent.slot())
}
