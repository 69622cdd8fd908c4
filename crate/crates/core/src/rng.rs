//! Label-addressable pseudorandom streams.
//!
//! A [`SeededRng`] holds nothing but a 64-bit seed. Every consumer asks for a
//! [`Stream`] by label; the stream key is `SHA-256(domain || seed || label)`
//! and the stream itself is ChaCha20 in counter mode. Two parties holding the
//! same seed therefore regenerate any sub-stream independently, in any order,
//! which is what mask cancellation depends on.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"fastlloyd/stream/v1";

/// Which of the two aggregated quantities a mask or noise draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryKind {
    Sums,
    Counts,
}

impl QueryKind {
    fn tag(self) -> u8 {
        match self {
            QueryKind::Sums => 0,
            QueryKind::Counts => 1,
        }
    }
}

/// Domain-separation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// One sphere-packing placement pass; `step` is the binary-search step.
    Init { step: u32 },
    /// Shuffling the dataset into client shards.
    Partition,
    /// Mask of `party` for query `kind` in round `round`.
    Mask { round: u32, kind: QueryKind, party: u32 },
    /// Server noise for one round and query. Only ever keyed with the
    /// server's private noise seed.
    Noise { round: u32, kind: QueryKind },
    /// Synthetic data generation, `part` separates sub-tasks.
    Synth { part: u32 },
    /// Free-form label for tests and tools.
    Custom { tag: u64 },
}

impl Stream {
    fn encode(&self, out: &mut Vec<u8>) {
        match *self {
            Stream::Init { step } => {
                out.push(1);
                out.extend_from_slice(&step.to_le_bytes());
            }
            Stream::Partition => out.push(2),
            Stream::Mask { round, kind, party } => {
                out.push(3);
                out.extend_from_slice(&round.to_le_bytes());
                out.push(kind.tag());
                out.extend_from_slice(&party.to_le_bytes());
            }
            Stream::Noise { round, kind } => {
                out.push(4);
                out.extend_from_slice(&round.to_le_bytes());
                out.push(kind.tag());
            }
            Stream::Synth { part } => {
                out.push(5);
                out.extend_from_slice(&part.to_le_bytes());
            }
            Stream::Custom { tag } => {
                out.push(6);
                out.extend_from_slice(&tag.to_le_bytes());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededRng {
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self, label: Stream) -> [u8; 32] {
        let mut buf = Vec::with_capacity(DOMAIN.len() + 24);
        buf.extend_from_slice(DOMAIN);
        buf.extend_from_slice(&self.seed.to_le_bytes());
        label.encode(&mut buf);
        Sha256::digest(&buf).into()
    }

    /// Fresh generator positioned at the start of the labelled stream.
    pub fn stream(&self, label: Stream) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key(label))
    }

    /// The `index`-th 64-bit word of the labelled stream, without generating
    /// the words before it.
    pub fn word_at(&self, label: Stream, index: u64) -> u64 {
        let mut rng = self.stream(label);
        // word_pos counts 32-bit words
        rng.set_word_pos(u128::from(index) * 2);
        rng.next_u64()
    }
}
