//! End-to-end runs: client sessions, the server loop, and the three ways of
//! wiring them (threads over pipes, TCP, or a single in-process loop).

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::client::{client_send, receive_update, RoundMasks};
use super::server::{server_aggregate, AggregationServer, NoiseSource, RoundNoise, ServerSummary};
use super::transport::{pipe, ByteStream, Link, LinkStats, DEFAULT_TIMEOUT};
use super::wire::{MsaMessage, MsgKind};
use crate::cluster::{assign, local_update, reconstruct_centroids, CentroidState, UpdateRule};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ringcodec::FixedPoint;
use crate::rng::{QueryKind, SeededRng};

/// What the clients do in one round and what noise the server adds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    /// Points farther than this from every centroid are discarded.
    pub assign_radius: Option<f64>,
    /// Displacement bound when the rule clips.
    pub clip_radius: f64,
    pub noise: RoundNoise,
}

/// Everything both sides need to execute a run, minus the shared seed and
/// the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub k: usize,
    pub d: usize,
    pub parties: usize,
    pub codec: FixedPoint,
    pub rule: UpdateRule,
    pub rounds: Vec<RoundPlan>,
}

impl RunPlan {
    pub fn iterations(&self) -> usize {
        self.rounds.len()
    }

    pub fn noise_schedule(&self) -> Vec<RoundNoise> {
        self.rounds.iter().map(|r| r.noise).collect()
    }

    /// Payload bytes of one iteration over all clients, both directions.
    pub fn payload_bytes_per_iteration(&self) -> u64 {
        (2 * self.parties * self.k * (self.d + 1) * self.codec.width.bytes()) as u64
    }

    pub fn without_noise(mut self) -> Self {
        for r in self.rounds.iter_mut() {
            r.noise = RoundNoise::NONE;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportOptions {
    /// Injected before every send.
    pub latency: Duration,
    pub timeout: Option<Duration>,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { latency: Duration::ZERO, timeout: Some(DEFAULT_TIMEOUT) }
    }
}

/// One client's protocol state.
pub struct ClientSession {
    party: usize,
    plan: RunPlan,
    rng: SeededRng,
    data: Dataset,
    state: CentroidState,
    masks: Option<(u32, RoundMasks)>,
}

impl ClientSession {
    pub fn new(party: usize, plan: RunPlan, rng: SeededRng, data: Dataset, init: CentroidState) -> Result<Self> {
        if party >= plan.parties {
            return Err(Error::invalid(format!("party {party} out of range for {} clients", plan.parties)));
        }
        if data.d() != plan.d || init.d != plan.d || init.k != plan.k {
            return Err(Error::invalid("data or initial centroids do not match the plan's k and d"));
        }
        Ok(ClientSession { party, plan, rng, data, state: init, masks: None })
    }

    pub fn party(&self) -> usize {
        self.party
    }

    pub fn state(&self) -> &CentroidState {
        &self.state
    }

    pub fn into_state(self) -> CentroidState {
        self.state
    }

    fn round_plan(&self, round: u32) -> Result<&RoundPlan> {
        self.plan
            .rounds
            .get((round as usize).wrapping_sub(1))
            .ok_or_else(|| Error::violation(format!("round {round} is outside the plan")))
    }

    /// Assign, compute the local update and mask it.
    pub fn prepare(&mut self, round: u32) -> Result<[MsaMessage; 2]> {
        let rp = *self.round_plan(round)?;
        let labels = assign(&self.data, &self.state, rp.assign_radius);
        let update = local_update(&self.data, &labels, &self.state, self.plan.rule.relative);
        let p = &self.plan;
        let masks = RoundMasks::derive(&self.rng, round, p.parties, p.k, p.d, p.codec);
        let msgs = client_send(&update, round, self.party, &masks, p.codec)?;
        self.masks = Some((round, masks));
        Ok(msgs)
    }

    /// Unmask the broadcast results and move the centroids.
    pub fn finish(&mut self, round: u32, sums: &MsaMessage, counts: &MsaMessage) -> Result<()> {
        let rp = *self.round_plan(round)?;
        let masks = match self.masks.take() {
            Some((r, m)) if r == round => m,
            _ => return Err(Error::violation(format!("result for round {round} arrived before its request"))),
        };
        let global = receive_update(sums, counts, round, &masks, self.plan.codec)?;
        self.state = reconstruct_centroids(&global, &self.state, rp.clip_radius, self.plan.rule);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientOutcome {
    pub party: usize,
    pub centroids: CentroidState,
    /// Wall clock of each iteration, milliseconds.
    pub iter_ms: Vec<f64>,
    pub stats: LinkStats,
}

/// Drive a session over a link to the server.
pub fn run_client<S: ByteStream>(mut session: ClientSession, mut link: Link<S>) -> Result<ClientOutcome> {
    let mut iter_ms = Vec::with_capacity(session.plan.iterations());
    for round in 1..=session.plan.iterations() as u32 {
        let start = Instant::now();
        let [s, c] = session.prepare(round)?;
        link.send(&[&s, &c])?;
        let sums = link.recv(round)?;
        let counts = link.recv(round)?;
        session.finish(round, &sums, &counts)?;
        iter_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(ClientOutcome { party: session.party, centroids: session.into_state(), iter_ms, stats: link.stats() })
}

/// Result of a complete run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub centroids: CentroidState,
    pub clients: Vec<ClientOutcome>,
    pub payload_bytes_per_iteration: u64,
    pub round_trips_per_iteration: f64,
}

impl RunOutcome {
    fn from_clients(clients: Vec<ClientOutcome>, iterations: usize) -> Result<Self> {
        let first = clients.first().ok_or_else(|| Error::invalid("no clients"))?.centroids.clone();
        if let Some(c) = clients.iter().find(|c| c.centroids != first) {
            return Err(Error::violation(format!("client {} finished with different centroids", c.party)));
        }
        let t = iterations.max(1) as u64;
        let payload: u64 = clients.iter().map(|c| c.stats.payload_bytes_sent + c.stats.payload_bytes_received).sum();
        let trips = clients[0].stats.round_trips as f64 / t as f64;
        Ok(RunOutcome { centroids: first, clients, payload_bytes_per_iteration: payload / t, round_trips_per_iteration: trips })
    }

    /// Mean per-iteration wall clock of the first client.
    pub fn iter_ms_mean(&self) -> f64 {
        let ms = &self.clients[0].iter_ms;
        if ms.is_empty() {
            0.0
        } else {
            ms.iter().sum::<f64>() / ms.len() as f64
        }
    }
}

fn sessions(plan: &RunPlan, seed: u64, shards: Vec<Dataset>, init: &CentroidState) -> Result<Vec<ClientSession>> {
    if shards.len() != plan.parties {
        return Err(Error::invalid(format!("{} shards for {} clients", shards.len(), plan.parties)));
    }
    shards
        .into_iter()
        .enumerate()
        .map(|(i, data)| ClientSession::new(i, plan.clone(), SeededRng::new(seed), data, init.clone()))
        .collect()
}

/// Lower rank is the more likely root cause when several threads fail.
fn error_rank(e: &Error) -> u8 {
    match e {
        Error::ProtocolViolation(m) if m.contains("closed") => 2,
        Error::Io(_) => 2,
        Error::RoundTimeout { .. } => 3,
        Error::ProtocolViolation(_) => 1,
        _ => 0,
    }
}

/// Server plus one thread per client, connected by in-memory pipes that use
/// the same framing as TCP.
pub fn run_local(
    plan: &RunPlan,
    seed: u64,
    shards: Vec<Dataset>,
    init: &CentroidState,
    source: NoiseSource,
    opts: TransportOptions,
) -> Result<(RunOutcome, ServerSummary)> {
    run_local_with(plan, seed, shards, init, source, opts, false)
}

pub(crate) fn run_local_with(
    plan: &RunPlan,
    seed: u64,
    shards: Vec<Dataset>,
    init: &CentroidState,
    source: NoiseSource,
    opts: TransportOptions,
    keep_transcript: bool,
) -> Result<(RunOutcome, ServerSummary)> {
    let sessions = sessions(plan, seed, shards, init)?;
    let mut server_links = Vec::with_capacity(plan.parties);
    let mut client_links = Vec::with_capacity(plan.parties);
    for _ in 0..plan.parties {
        let (s, c) = pipe();
        server_links.push(Link::new(s, opts.latency, opts.timeout)?);
        client_links.push(Link::new(c, opts.latency, opts.timeout)?);
    }
    run_threads(plan, sessions, server_links, client_links, source, keep_transcript)
}

/// Like [`run_local`], but every client talks to the server over a loopback
/// TCP connection.
pub fn run_loopback_tcp(
    plan: &RunPlan,
    seed: u64,
    shards: Vec<Dataset>,
    init: &CentroidState,
    source: NoiseSource,
    opts: TransportOptions,
) -> Result<(RunOutcome, ServerSummary)> {
    let sessions = sessions(plan, seed, shards, init)?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let mut server_links = Vec::with_capacity(plan.parties);
    let mut client_links = Vec::with_capacity(plan.parties);
    for _ in 0..plan.parties {
        let client = TcpStream::connect(addr)?;
        client.set_nodelay(true)?;
        let (server, _) = listener.accept()?;
        server.set_nodelay(true)?;
        server_links.push(Link::new(server, opts.latency, opts.timeout)?);
        client_links.push(Link::new(client, opts.latency, opts.timeout)?);
    }
    run_threads(plan, sessions, server_links, client_links, source, false)
}

fn run_threads<S: ByteStream>(
    plan: &RunPlan,
    sessions: Vec<ClientSession>,
    server_links: Vec<Link<S>>,
    client_links: Vec<Link<S>>,
    source: NoiseSource,
    keep_transcript: bool,
) -> Result<(RunOutcome, ServerSummary)> {
    let server = AggregationServer::new(server_links, plan.codec, plan.noise_schedule(), source).keep_transcript(keep_transcript);
    let (server_result, client_results) = thread::scope(|scope| {
        let server = scope.spawn(move || server.run());
        let clients: Vec<_> = sessions
            .into_iter()
            .zip(client_links)
            .map(|(session, link)| scope.spawn(move || run_client(session, link)))
            .collect();
        let clients: Vec<Result<ClientOutcome>> =
            clients.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
        (server.join().expect("server thread panicked"), clients)
    });
    let mut outcomes = Vec::with_capacity(client_results.len());
    let mut errors = Vec::new();
    for r in client_results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(e),
        }
    }
    let summary = match server_result {
        Ok(s) => Some(s),
        Err(e) => {
            errors.push(e);
            None
        }
    };
    if let Some(e) = errors.into_iter().min_by_key(error_rank) {
        return Err(e);
    }
    Ok((RunOutcome::from_clients(outcomes, plan.iterations())?, summary.expect("server succeeded")))
}

/// The same computation as [`run_local`] in a single thread with no byte
/// transport. Used for utility sweeps.
pub fn run_central(
    plan: &RunPlan,
    seed: u64,
    shards: Vec<Dataset>,
    init: &CentroidState,
    source: NoiseSource,
) -> Result<RunOutcome> {
    let mut sessions = sessions(plan, seed, shards, init)?;
    let mut stats = vec![LinkStats::default(); sessions.len()];
    let mut iter_ms = Vec::with_capacity(plan.iterations());
    for (idx, noise) in plan.noise_schedule().into_iter().enumerate() {
        let round = idx as u32 + 1;
        let start = Instant::now();
        let mut sums = Vec::with_capacity(sessions.len());
        let mut counts = Vec::with_capacity(sessions.len());
        for s in sessions.iter_mut() {
            let [a, b] = s.prepare(round)?;
            sums.push(a);
            counts.push(b);
        }
        let up: Vec<u64> = sums.iter().zip(&counts).map(|(a, b)| (a.payload_len() + b.payload_len()) as u64).collect();
        let s_out = server_aggregate(&sums, round, MsgKind::RelSums, noise.sums, plan.codec, &mut source.rng(round, QueryKind::Sums))?;
        let c_out =
            server_aggregate(&counts, round, MsgKind::Counts, noise.counts, plan.codec, &mut source.rng(round, QueryKind::Counts))?;
        let down = (s_out.payload_len() + c_out.payload_len()) as u64;
        for (i, s) in sessions.iter_mut().enumerate() {
            s.finish(round, &s_out, &c_out)?;
            let st = &mut stats[i];
            st.sends += 1;
            st.frames_sent += 2;
            st.frames_received += 2;
            st.payload_bytes_sent += up[i];
            st.payload_bytes_received += down;
            st.round_trips += 1;
        }
        iter_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let clients = sessions
        .into_iter()
        .zip(stats)
        .map(|(s, stats)| ClientOutcome { party: s.party, centroids: s.into_state(), iter_ms: iter_ms.clone(), stats })
        .collect();
    RunOutcome::from_clients(clients, plan.iterations())
}

/// Accept one TCP connection per client and serve the whole run.
pub fn serve_tcp(listener: &TcpListener, plan: &RunPlan, source: NoiseSource, opts: TransportOptions) -> Result<ServerSummary> {
    let mut links = Vec::with_capacity(plan.parties);
    for _ in 0..plan.parties {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        links.push(Link::new(stream, opts.latency, opts.timeout)?);
    }
    AggregationServer::new(links, plan.codec, plan.noise_schedule(), source).run()
}

/// Connect to a server, retrying until `patience` runs out.
pub fn connect_tcp(addr: impl ToSocketAddrs + Clone, patience: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + patience;
    loop {
        match TcpStream::connect(addr.clone()) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() >= deadline => return Err(e.into()),
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Run one client over TCP.
pub fn run_tcp_client(
    stream: TcpStream,
    party: usize,
    plan: &RunPlan,
    seed: u64,
    data: Dataset,
    init: &CentroidState,
    opts: TransportOptions,
) -> Result<ClientOutcome> {
    let session = ClientSession::new(party, plan.clone(), SeededRng::new(seed), data, init.clone())?;
    run_client(session, Link::new(stream, opts.latency, opts.timeout)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{sphere_packing_init, RadiusSchedule};
    use crate::dataset::partition_dataset;
    use crate::msa::server::Noise;
    use crate::params::RingWidth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FP: FixedPoint = FixedPoint { q: 16, width: RingWidth::W64 };

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(2 * n);
        for i in 0..n {
            let c = if i % 2 == 0 { -0.5 } else { 0.5 };
            values.push(c + r.random_range(-0.1..0.1));
            values.push(c + r.random_range(-0.1..0.1));
        }
        Dataset::new(2, values).unwrap()
    }

    fn plan(parties: usize, noise: RoundNoise, relative: bool) -> RunPlan {
        let eta = RadiusSchedule::vacuous(2, 1.0).eta;
        RunPlan {
            k: 2,
            d: 2,
            parties,
            codec: FP,
            rule: UpdateRule { relative, clip: relative, bound: 1.0 },
            rounds: vec![RoundPlan { assign_radius: relative.then_some(eta), clip_radius: eta, noise }; 4],
        }
    }

    fn init() -> CentroidState {
        sphere_packing_init(2, 2, 1.0, &SeededRng::new(3)).0
    }

    #[test]
    fn local_and_central_agree() {
        let noise = RoundNoise { sums: Noise::Gaussian { std: 0.5 }, counts: Noise::Gaussian { std: 1.0 } };
        let p = plan(3, noise, true);
        let shards = partition_dataset(&blobs(300, 1), 3, &SeededRng::new(9)).unwrap();
        let (local, summary) =
            run_local(&p, 9, shards.clone(), &init(), NoiseSource::Seeded(4), TransportOptions::default()).unwrap();
        let central = run_central(&p, 9, shards, &init(), NoiseSource::Seeded(4)).unwrap();
        assert_eq!(local.centroids, central.centroids);
        assert_eq!(local.centroids.iteration, 4);
        assert_eq!(summary.rounds, 4);
        assert_eq!(local.payload_bytes_per_iteration, p.payload_bytes_per_iteration());
        assert_eq!(central.payload_bytes_per_iteration, p.payload_bytes_per_iteration());
        assert_eq!(local.round_trips_per_iteration, 1.0);
        for c in &local.clients {
            assert_eq!(c.stats.sends, 4);
            assert_eq!(c.stats.frames_received, 8);
        }
    }

    #[test]
    fn default_payload_is_192_bytes() {
        assert_eq!(plan(2, RoundNoise::NONE, true).payload_bytes_per_iteration(), 192);
    }

    #[test]
    fn noiseless_run_finds_blobs() {
        let p = plan(2, RoundNoise::NONE, false);
        let shards = partition_dataset(&blobs(400, 2), 2, &SeededRng::new(1)).unwrap();
        let (out, _) = run_local(&p, 1, shards, &init(), NoiseSource::Entropy, TransportOptions::default()).unwrap();
        let mut xs: Vec<f64> = out.centroids.rows().map(|c| c[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 0.5).abs() < 0.02 && (xs[1] - 0.5).abs() < 0.02, "{xs:?}");
    }

    #[test]
    fn transcript_hides_plaintext_words() {
        let p = plan(2, RoundNoise::NONE, true);
        let shards = partition_dataset(&blobs(200, 3), 2, &SeededRng::new(2)).unwrap();
        let (_, summary) = run_local_with(
            &p,
            5,
            shards.clone(),
            &init(),
            NoiseSource::Seeded(0),
            TransportOptions::default(),
            true,
        )
        .unwrap();
        // replay the clients in the clear
        let mut state = init();
        for rt in &summary.transcript {
            let rp = p.rounds[rt.round as usize - 1];
            let mut plain = Vec::new();
            for shard in &shards {
                let labels = assign(shard, &state, rp.assign_radius);
                let u = local_update(shard, &labels, &state, true);
                plain.extend(FP.encode(&u.sums, 2, 2).unwrap().words);
                plain.extend(FP.encode(&u.counts, 2, 1).unwrap().words);
            }
            let seen: Vec<u64> = rt.received.iter().flat_map(|m| m.matrix.words.clone()).collect();
            assert!(plain.iter().all(|w| !seen.contains(w)), "round {}", rt.round);
            let masks = RoundMasks::derive(&SeededRng::new(5), rt.round, 2, 2, 2, FP);
            let global = receive_update(&rt.broadcast[0], &rt.broadcast[1], rt.round, &masks, FP).unwrap();
            state = reconstruct_centroids(&global, &state, rp.clip_radius, p.rule);
        }
    }

    #[test]
    fn shard_count_must_match() {
        let p = plan(3, RoundNoise::NONE, true);
        let shards = partition_dataset(&blobs(10, 1), 2, &SeededRng::new(1)).unwrap();
        assert!(run_central(&p, 1, shards, &init(), NoiseSource::Entropy).is_err());
    }

    #[test]
    fn overflow_surfaces_from_local_run() {
        let mut p = plan(2, RoundNoise::NONE, false);
        p.codec = FixedPoint { q: 16, width: RingWidth::W32 };
        let big = Dataset::new(2, vec![0.9; 2 * 80_000]).unwrap();
        let shards = partition_dataset(&big, 2, &SeededRng::new(1)).unwrap();
        let r = run_local(&p, 1, shards, &init(), NoiseSource::Entropy, TransportOptions::default());
        assert!(matches!(r, Err(Error::Overflow { .. })), "{r:?}");
    }

    #[test]
    fn tcp_loopback_run() {
        let p = plan(2, RoundNoise::NONE, true);
        let shards = partition_dataset(&blobs(100, 4), 2, &SeededRng::new(3)).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let opts = TransportOptions::default();
        let (tcp, local) = thread::scope(|scope| {
            let server = scope.spawn(|| serve_tcp(&listener, &p, NoiseSource::Seeded(1), opts));
            let clients: Vec<_> = shards
                .iter()
                .cloned()
                .enumerate()
                .map(|(i, data)| {
                    let p = &p;
                    scope.spawn(move || {
                        let stream = connect_tcp(addr, Duration::from_secs(5)).unwrap();
                        run_tcp_client(stream, i, p, 7, data, &init(), opts).unwrap()
                    })
                })
                .collect();
            let outs: Vec<_> = clients.into_iter().map(|h| h.join().unwrap()).collect();
            server.join().unwrap().unwrap();
            (outs, run_local(&p, 7, shards.clone(), &init(), NoiseSource::Seeded(1), opts).unwrap().0)
        });
        for c in tcp {
            assert_eq!(c.centroids, local.centroids);
        }
    }

    #[test]
    fn loopback_tcp_matches_local() {
        let p = plan(2, RoundNoise::NONE, true);
        let shards = partition_dataset(&blobs(100, 5), 2, &SeededRng::new(2)).unwrap();
        let opts = TransportOptions::default();
        let (tcp, _) = run_loopback_tcp(&p, 3, shards.clone(), &init(), NoiseSource::Seeded(1), opts).unwrap();
        let (local, _) = run_local(&p, 3, shards, &init(), NoiseSource::Seeded(1), opts).unwrap();
        assert_eq!(tcp.centroids, local.centroids);
        assert_eq!(tcp.clients[0].stats, local.clients[0].stats);
        assert_eq!(tcp.round_trips_per_iteration, 1.0);
    }
}
