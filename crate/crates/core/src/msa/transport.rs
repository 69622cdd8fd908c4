//! Byte transports for the aggregation protocol.
//!
//! [`Link`] wraps any [`ByteStream`] with framing, injected latency and
//! traffic counters. TCP sockets and the in-process [`pipe`] go through the
//! same framing code.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{read_frame, write_frames, MsaMessage};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub trait ByteStream: Read + Write + Send {
    fn set_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()>;
}

impl ByteStream for TcpStream {
    fn set_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.set_read_timeout(timeout)
    }
}

/// One end of an in-memory duplex byte pipe.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
    timeout: Option<Duration>,
}

/// Connected pair of pipe ends.
pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    let end = |tx, rx| PipeEnd { tx, rx, buf: Vec::new(), pos: 0, timeout: None };
    (end(atx, arx), end(btx, brx))
}

impl Read for PipeEnd {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            let next = match self.timeout {
                Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                    RecvTimeoutError::Timeout => io::ErrorKind::TimedOut,
                    RecvTimeoutError::Disconnected => io::ErrorKind::UnexpectedEof,
                }),
                None => self.rx.recv().map_err(|_| io::ErrorKind::UnexpectedEof),
            };
            match next {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(io::ErrorKind::UnexpectedEof) => return Ok(0),
                Err(kind) => return Err(kind.into()),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe peer dropped"))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl ByteStream for PipeEnd {
    fn set_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.timeout = timeout;
        Ok(())
    }
}

/// Traffic counters of one link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    /// Write operations (each may carry several frames).
    pub sends: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    /// Bytes on the wire, framing and headers included.
    pub wire_bytes_sent: u64,
    pub wire_bytes_received: u64,
    /// Ring-word payload bytes only.
    pub payload_bytes_sent: u64,
    pub payload_bytes_received: u64,
    /// A send followed by the first receive after it.
    pub round_trips: u64,
}

pub struct Link<S> {
    stream: S,
    latency: Duration,
    stats: LinkStats,
    awaiting_reply: bool,
}

impl<S: ByteStream> Link<S> {
    pub fn new(mut stream: S, latency: Duration, timeout: Option<Duration>) -> Result<Self> {
        stream.set_timeout(timeout)?;
        Ok(Link { stream, latency, stats: LinkStats::default(), awaiting_reply: false })
    }

    /// Write all messages in one operation, after the injected latency.
    pub fn send(&mut self, messages: &[&MsaMessage]) -> Result<()> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        let n = write_frames(&mut self.stream, messages)?;
        self.stats.sends += 1;
        self.stats.frames_sent += messages.len() as u64;
        self.stats.wire_bytes_sent += n as u64;
        self.stats.payload_bytes_sent += messages.iter().map(|m| m.payload_len() as u64).sum::<u64>();
        self.awaiting_reply = true;
        Ok(())
    }

    /// Read one message; a timeout or a closed peer in `round` becomes
    /// [`Error::RoundTimeout`] or a protocol violation.
    pub fn recv(&mut self, round: u32) -> Result<MsaMessage> {
        let (msg, n) = read_frame(&mut self.stream).map_err(|e| match e {
            Error::Io(io) if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {
                Error::RoundTimeout { round }
            }
            Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                Error::violation(format!("peer closed the connection in round {round}"))
            }
            other => other,
        })?;
        self.stats.frames_received += 1;
        self.stats.wire_bytes_received += n as u64;
        self.stats.payload_bytes_received += msg.payload_len() as u64;
        if self.awaiting_reply {
            self.stats.round_trips += 1;
            self.awaiting_reply = false;
        }
        Ok(msg)
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msa::wire::MsgKind;
    use crate::params::RingWidth;
    use crate::ringcodec::RingMatrix;
    use std::time::Instant;

    fn msg(round: u32) -> MsaMessage {
        MsaMessage::new(round, MsgKind::RelSums, RingMatrix::from_words(1, 2, RingWidth::W64, vec![5, 6]).unwrap()).unwrap()
    }

    #[test]
    fn pipe_carries_frames_both_ways() {
        let (a, b) = pipe();
        let mut a = Link::new(a, Duration::ZERO, Some(Duration::from_secs(5))).unwrap();
        let mut b = Link::new(b, Duration::ZERO, Some(Duration::from_secs(5))).unwrap();
        a.send(&[&msg(1), &msg(2)]).unwrap();
        assert_eq!(b.recv(1).unwrap(), msg(1));
        assert_eq!(b.recv(1).unwrap(), msg(2));
        b.send(&[&msg(3)]).unwrap();
        assert_eq!(a.recv(1).unwrap(), msg(3));
        let s = a.stats();
        assert_eq!((s.sends, s.frames_sent, s.frames_received, s.round_trips), (1, 2, 1, 1));
        assert_eq!(s.payload_bytes_sent, 32);
        assert_eq!(s.wire_bytes_sent, 2 * (4 + 15 + 16));
    }

    #[test]
    fn pipe_timeout_maps_to_round_timeout() {
        let (a, _b) = pipe();
        let mut a = Link::new(a, Duration::ZERO, Some(Duration::from_millis(20))).unwrap();
        assert!(matches!(a.recv(4), Err(Error::RoundTimeout { round: 4 })));
    }

    #[test]
    fn closed_peer_is_a_violation() {
        let (a, b) = pipe();
        drop(b);
        let mut a = Link::new(a, Duration::ZERO, None).unwrap();
        assert!(matches!(a.recv(1), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn latency_is_injected_per_send() {
        let (a, _b) = pipe();
        let mut a = Link::new(a, Duration::from_millis(15), None).unwrap();
        let start = Instant::now();
        a.send(&[&msg(1)]).unwrap();
        a.send(&[&msg(1)]).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(30));
    }
}
