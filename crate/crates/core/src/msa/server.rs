//! Aggregation server. It sums masked ring words, adds its own quantized
//! noise and broadcasts the result; it never sees the shared seed, a mask or
//! an unmasked value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::transport::{ByteStream, Link, LinkStats};
use super::wire::{MsaMessage, MsgKind};
use crate::error::{Error, Result};
use crate::ringcodec::FixedPoint;
use crate::rng::{QueryKind, SeededRng, Stream};

/// Noise added by the server to one aggregated query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Noise {
    None,
    Gaussian { std: f64 },
    Laplace { scale: f64 },
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Noise::None => 0.0,
            Noise::Gaussian { std } => {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            }
            Noise::Laplace { scale } => {
                // inverse CDF on u in (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// Standard deviation of the distribution.
    pub fn std(&self) -> f64 {
        match *self {
            Noise::None => 0.0,
            Noise::Gaussian { std } => std,
            Noise::Laplace { scale } => scale * std::f64::consts::SQRT_2,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Noise::None) || self.std() == 0.0
    }
}

/// Noise of both queries in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundNoise {
    pub sums: Noise,
    pub counts: Noise,
}

impl RoundNoise {
    pub const NONE: RoundNoise = RoundNoise { sums: Noise::None, counts: Noise::None };
}

/// Where the server's noise randomness comes from. It is never derived from
/// the clients' shared seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    /// Fresh operating-system entropy for every draw.
    Entropy,
    /// Reproducible server-private seed, for experiments.
    Seeded(u64),
}

impl NoiseSource {
    pub fn from_seed(seed: Option<u64>) -> Self {
        seed.map_or(NoiseSource::Entropy, NoiseSource::Seeded)
    }

    pub fn rng(&self, round: u32, kind: QueryKind) -> ChaCha20Rng {
        match *self {
            NoiseSource::Entropy => ChaCha20Rng::from_os_rng(),
            NoiseSource::Seeded(seed) => SeededRng::new(seed).stream(Stream::Noise { round, kind }),
        }
    }
}

/// Sum one kind of masked message from every client and add quantized noise
/// to each element.
pub fn server_aggregate<R: Rng + ?Sized>(
    msgs: &[MsaMessage],
    round: u32,
    kind: MsgKind,
    noise: Noise,
    codec: FixedPoint,
    rng: &mut R,
) -> Result<MsaMessage> {
    let first = msgs.first().ok_or_else(|| Error::violation("no messages to aggregate"))?;
    let mut acc = first.matrix.clone();
    for (i, m) in msgs.iter().enumerate() {
        if m.round != round {
            return Err(Error::violation(format!(
                "message {i} is for round {}, expected {round}",
                m.round
            )));
        }
        if m.kind != kind {
            return Err(Error::violation(format!("message {i} has kind {:?}, expected {kind:?}", m.kind)));
        }
        if !m.matrix.same_shape(&first.matrix) {
            return Err(Error::violation(format!(
                "message {i} is {}x{}/{}, expected {}x{}/{}",
                m.matrix.rows,
                m.matrix.cols,
                m.matrix.width.bits(),
                first.matrix.rows,
                first.matrix.cols,
                first.matrix.width.bits()
            )));
        }
        if m.matrix.width != codec.width {
            return Err(Error::violation("message width differs from the server ring"));
        }
        if i > 0 {
            acc.wrapping_add_assign(&m.matrix);
        }
    }
    if !noise.is_none() {
        let mask = codec.width.word_mask();
        for w in acc.words.iter_mut() {
            *w = w.wrapping_add(codec.quantize_noise(noise.sample(rng))) & mask;
        }
    }
    MsaMessage::new(round, MsgKind::NoisedResult, acc)
}

/// Everything the server keeps about one round: masked inputs and results.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTranscript {
    pub round: u32,
    pub received: Vec<MsaMessage>,
    pub broadcast: [MsaMessage; 2],
}

#[derive(Debug, Clone)]
pub struct ServerSummary {
    pub rounds: u32,
    pub links: Vec<LinkStats>,
    /// Kept only when requested at construction.
    pub transcript: Vec<RoundTranscript>,
}

/// Server side of the protocol over one link per client.
pub struct AggregationServer<S> {
    links: Vec<Link<S>>,
    codec: FixedPoint,
    schedule: Vec<RoundNoise>,
    source: NoiseSource,
    keep_transcript: bool,
}

impl<S: ByteStream> AggregationServer<S> {
    /// `schedule[t - 1]` is the noise of round `t`; its length fixes the
    /// number of rounds.
    pub fn new(links: Vec<Link<S>>, codec: FixedPoint, schedule: Vec<RoundNoise>, source: NoiseSource) -> Self {
        AggregationServer { links, codec, schedule, source, keep_transcript: false }
    }

    pub fn keep_transcript(mut self, keep: bool) -> Self {
        self.keep_transcript = keep;
        self
    }

    /// Serve every round. Each client sends its sums and counts in one write
    /// and receives both noised results in one write.
    pub fn run(mut self) -> Result<ServerSummary> {
        let mut transcript = Vec::new();
        for (idx, noise) in self.schedule.clone().iter().enumerate() {
            let round = idx as u32 + 1;
            let mut sums = Vec::with_capacity(self.links.len());
            let mut counts = Vec::with_capacity(self.links.len());
            for link in self.links.iter_mut() {
                sums.push(link.recv(round)?);
                counts.push(link.recv(round)?);
            }
            let sums_out = server_aggregate(
                &sums,
                round,
                MsgKind::RelSums,
                noise.sums,
                self.codec,
                &mut self.source.rng(round, QueryKind::Sums),
            )?;
            let counts_out = server_aggregate(
                &counts,
                round,
                MsgKind::Counts,
                noise.counts,
                self.codec,
                &mut self.source.rng(round, QueryKind::Counts),
            )?;
            for link in self.links.iter_mut() {
                link.send(&[&sums_out, &counts_out])?;
            }
            if self.keep_transcript {
                transcript.push(RoundTranscript {
                    round,
                    received: sums.into_iter().chain(counts).collect(),
                    broadcast: [sums_out, counts_out],
                });
            }
        }
        Ok(ServerSummary {
            rounds: self.schedule.len() as u32,
            links: self.links.iter().map(Link::stats).collect(),
            transcript,
        })
    }
}
