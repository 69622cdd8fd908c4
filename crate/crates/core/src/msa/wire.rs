//! Versioned binary message format and length-prefixed framing.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FLMA"
//!      4     1  version (1)
//!      5     4  round, u32 LE
//!      9     1  kind: 0 = sums, 1 = counts, 2 = noised result
//!     10     2  rows, u16 LE
//!     12     2  cols, u16 LE
//!     14     1  word width in bits (32 or 64)
//!     15     -  rows * cols words, LE, row-major
//! ```
//!
//! On a stream every message is preceded by its length as a u32 LE.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::params::RingWidth;
use crate::ringcodec::RingMatrix;

pub const MAGIC: [u8; 4] = *b"FLMA";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 15;
/// Upper bound on a single frame, to reject garbage length prefixes.
pub const MAX_FRAME: usize = HEADER_LEN + 65535 * 65535 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgKind {
    /// Masked per-cluster sums (relative for the radius-constrained
    /// mechanism, absolute for the baselines).
    RelSums = 0,
    /// Masked per-cluster counts.
    Counts = 1,
    /// Aggregated, noised result broadcast by the server.
    NoisedResult = 2,
}

impl MsgKind {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(MsgKind::RelSums),
            1 => Ok(MsgKind::Counts),
            2 => Ok(MsgKind::NoisedResult),
            other => Err(Error::violation(format!("unknown message kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsaMessage {
    pub round: u32,
    pub kind: MsgKind,
    pub matrix: RingMatrix,
}

impl MsaMessage {
    pub fn new(round: u32, kind: MsgKind, matrix: RingMatrix) -> Result<Self> {
        if matrix.rows > u16::MAX as usize || matrix.cols > u16::MAX as usize {
            return Err(Error::invalid(format!(
                "{} x {} matrix exceeds the 16-bit shape fields",
                matrix.rows, matrix.cols
            )));
        }
        Ok(MsaMessage { round, kind, matrix })
    }

    pub fn payload_len(&self) -> usize {
        self.matrix.len() * self.matrix.width.bytes()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let m = &self.matrix;
        out.reserve(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(m.rows as u16).to_le_bytes());
        out.extend_from_slice(&(m.cols as u16).to_le_bytes());
        out.push(m.width.bits() as u8);
        match m.width {
            RingWidth::W32 => m.words.iter().for_each(|&w| out.extend_from_slice(&(w as u32).to_le_bytes())),
            RingWidth::W64 => m.words.iter().for_each(|&w| out.extend_from_slice(&w.to_le_bytes())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::violation(format!("message of {} bytes is shorter than the header", bytes.len())));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::violation("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::violation(format!("unsupported version {}", bytes[4])));
        }
        let round = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let kind = MsgKind::from_byte(bytes[9])?;
        let rows = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
        let cols = u16::from_le_bytes(bytes[12..14].try_into().unwrap()) as usize;
        let width = RingWidth::from_bits(bytes[14] as u32).map_err(|e| Error::violation(e.to_string()))?;
        let payload = &bytes[HEADER_LEN..];
        let expected = rows * cols * width.bytes();
        if payload.len() != expected {
            return Err(Error::violation(format!(
                "payload is {} bytes, expected {expected} for {rows} x {cols} x {}",
                payload.len(),
                width.bits()
            )));
        }
        let words = match width {
            RingWidth::W32 => payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
                .collect(),
            RingWidth::W64 => payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        Ok(MsaMessage { round, kind, matrix: RingMatrix { rows, cols, width, words } })
    }
}

/// Frame several messages into one buffer (one write on the wire).
pub fn frame(messages: &[&MsaMessage]) -> Vec<u8> {
    let total: usize = messages.iter().map(|m| 4 + m.encoded_len()).sum();
    let mut out = Vec::with_capacity(total);
    for m in messages {
        out.extend_from_slice(&(m.encoded_len() as u32).to_le_bytes());
        m.encode_into(&mut out);
    }
    out
}

pub fn write_frames<W: Write>(w: &mut W, messages: &[&MsaMessage]) -> io::Result<usize> {
    let buf = frame(messages);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(buf.len())
}

/// Read one framed message. Returns the message and the number of bytes consumed.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(MsaMessage, usize)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if !(HEADER_LEN..=MAX_FRAME).contains(&len) {
        return Err(Error::violation(format!("frame length {len} out of range")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok((MsaMessage::from_bytes(&body)?, len + 4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(width: RingWidth) -> MsaMessage {
        let matrix = RingMatrix::from_words(2, 3, width, vec![1, 2, 3, u64::MAX, 0, 42]).unwrap();
        MsaMessage::new(7, MsgKind::Counts, matrix).unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = sample(RingWidth::W32).to_bytes();
        assert_eq!(&bytes[..4], b"FLMA");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &[7, 0, 0, 0]);
        assert_eq!(bytes[9], 1);
        assert_eq!(&bytes[10..14], &[2, 0, 3, 0]);
        assert_eq!(bytes[14], 32);
        assert_eq!(bytes.len(), HEADER_LEN + 6 * 4);
        assert_eq!(&bytes[15..19], &[1, 0, 0, 0]);
        assert_eq!(&bytes[27..31], &[0xFF; 4]);
    }

    #[test]
    fn rejects_malformed_messages() {
        let good = sample(RingWidth::W64).to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(MsaMessage::from_bytes(&bad_magic).is_err());
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(MsaMessage::from_bytes(&bad_version).is_err());
        let mut bad_kind = good.clone();
        bad_kind[9] = 3;
        assert!(MsaMessage::from_bytes(&bad_kind).is_err());
        let mut bad_width = good.clone();
        bad_width[14] = 16;
        assert!(MsaMessage::from_bytes(&bad_width).is_err());
        assert!(MsaMessage::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(MsaMessage::from_bytes(&good[..10]).is_err());
    }

    #[test]
    fn framing_concatenates() {
        let a = sample(RingWidth::W64);
        let b = MsaMessage { kind: MsgKind::RelSums, ..sample(RingWidth::W32) };
        let buf = frame(&[&a, &b]);
        let mut cursor = buf.as_slice();
        let (ra, na) = read_frame(&mut cursor).unwrap();
        let (rb, nb) = read_frame(&mut cursor).unwrap();
        assert_eq!((ra, rb), (a.clone(), b.clone()));
        assert_eq!(na + nb, buf.len());
        assert!(cursor.is_empty());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            round in any::<u32>(),
            kind in 0u8..3,
            rows in 1usize..6,
            cols in 1usize..6,
            wide in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let width = if wide { RingWidth::W64 } else { RingWidth::W32 };
            let words = (0..rows * cols).map(|i| seed.rotate_left(i as u32).wrapping_mul(0x9E37_79B9_7F4A_7C15)).collect();
            let matrix = RingMatrix::from_words(rows, cols, width, words).unwrap();
            let msg = MsaMessage::new(round, MsgKind::from_byte(kind).unwrap(), matrix).unwrap();
            let bytes = msg.to_bytes();
            prop_assert_eq!(bytes.len(), msg.encoded_len());
            prop_assert_eq!(MsaMessage::from_bytes(&bytes).unwrap(), msg);
        }
    }
}
