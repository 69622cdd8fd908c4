//! Utility metrics, repeated-run sweeps and run reports.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{initial_centroids, plan, Algo, AlgoPlan, Calibration};
use crate::cluster::{nearest_sq, CentroidState, RadiusSchedule};
use crate::dataset::{partition_dataset, Dataset};
use crate::error::{Error, Result};
use crate::msa::{run_central, run_local, run_loopback_tcp, LinkStats, NoiseSource, RunOutcome, TransportOptions};
use crate::params::ProtocolParams;
use crate::rng::{SeededRng, Stream};

/// Mean squared distance of every point to its nearest centroid.
pub fn nicv(data: &Dataset, centroids: &CentroidState) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.points().map(|p| nearest_sq(p, centroids).1).sum::<f64>() / data.n() as f64
}

/// Trapezoidal area under a `(epsilon, nicv)` curve.
pub fn auc(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::invalid("AUC needs at least two points"));
    }
    if curve.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::invalid("epsilon values must be strictly increasing"));
    }
    Ok(curve.windows(2).map(|w| (w[0].1 + w[1].1) / 2.0 * (w[1].0 - w[0].0)).sum())
}

/// Partitioned data, initial centroids and plan of one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub algo: Algo,
    pub params: ProtocolParams,
    pub plan: AlgoPlan,
    pub init: CentroidState,
    pub shards: Vec<Dataset>,
}

impl Experiment {
    pub fn new(algo: Algo, params: &ProtocolParams, data: &Dataset) -> Result<Self> {
        if data.d() != params.d {
            return Err(Error::invalid(format!("data has d = {}, parameters say d = {}", data.d(), params.d)));
        }
        if !data.within(params.bound) {
            return Err(Error::invalid(format!("data leaves the domain [-{0}, {0}]", params.bound)));
        }
        let plan = plan(algo, params, data.n())?;
        let shards = partition_dataset(data, params.clients, &SeededRng::new(params.seed))?;
        Ok(Experiment { algo, params: params.clone(), plan, init: initial_centroids(params), shards })
    }

    pub fn run_local(&self, source: NoiseSource, opts: TransportOptions) -> Result<RunOutcome> {
        Ok(run_local(&self.plan.run, self.params.seed, self.shards.clone(), &self.init, source, opts)?.0)
    }

    pub fn run_loopback_tcp(&self, source: NoiseSource, opts: TransportOptions) -> Result<RunOutcome> {
        Ok(run_loopback_tcp(&self.plan.run, self.params.seed, self.shards.clone(), &self.init, source, opts)?.0)
    }

    pub fn run_central(&self, source: NoiseSource) -> Result<RunOutcome> {
        run_central(&self.plan.run, self.params.seed, self.shards.clone(), &self.init, source)
    }

    /// Report of a finished run as seen by one client.
    pub fn report(&self, data: &Dataset, view: ClientView<'_>, noise_seed: Option<u64>, mode: &str) -> RunReport {
        let t = self.plan.iterations.max(1) as u64;
        let own = view.stats.payload_bytes_sent + view.stats.payload_bytes_received;
        let mean = mean(view.iter_ms);
        RunReport {
            algo: self.algo,
            params: self.params.clone(),
            n: data.n(),
            noise_seed,
            iterations: self.plan.iterations,
            epsilon: self.plan.epsilon,
            delta: self.plan.delta,
            calibration: self.plan.calibration,
            radius: self.plan.radius,
            warnings: self.plan.warnings.clone(),
            nicv: nicv(data, view.centroids),
            centroids: view.centroids.clone(),
            bytes_per_iteration: own / t * self.params.clients as u64,
            client_traffic: view.stats,
            rounds_per_iteration: view.stats.round_trips as f64 / t as f64,
            runtime: Some(Runtime {
                mode: mode.to_string(),
                iter_ms_mean: mean,
                iter_ms_std: std_dev(view.iter_ms, mean),
                iter_ms: view.iter_ms.to_vec(),
            }),
        }
    }
}

/// What one client knows at the end of a run.
#[derive(Debug, Clone, Copy)]
pub struct ClientView<'a> {
    pub centroids: &'a CentroidState,
    pub stats: LinkStats,
    pub iter_ms: &'a [f64],
}

impl<'a> From<&'a RunOutcome> for ClientView<'a> {
    fn from(o: &'a RunOutcome) -> Self {
        ClientView { centroids: &o.centroids, stats: o.clients[0].stats, iter_ms: &o.clients[0].iter_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub mode: String,
    pub iter_ms_mean: f64,
    pub iter_ms_std: f64,
    pub iter_ms: Vec<f64>,
}

/// Outcome of one run plus the resolved configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algo: Algo,
    pub params: ProtocolParams,
    pub n: usize,
    pub noise_seed: Option<u64>,
    pub iterations: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub calibration: Calibration,
    pub radius: Option<RadiusSchedule>,
    pub warnings: Vec<String>,
    pub nicv: f64,
    pub centroids: CentroidState,
    /// Payload bytes per iteration over all clients, both directions.
    pub bytes_per_iteration: u64,
    /// Counters of the reporting client.
    pub client_traffic: LinkStats,
    pub rounds_per_iteration: f64,
    /// Wall-clock data; absent from deterministic reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<Runtime>,
}

impl RunReport {
    /// The report without wall-clock data.
    pub fn deterministic(&self) -> RunReport {
        RunReport { runtime: None, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad report: {e}")))
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algo: Algo,
    pub eps: f64,
    pub run: usize,
    pub nicv: f64,
    pub iter_ms_mean: f64,
    pub bytes_per_iter: u64,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub sigma: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Template; `epsilon` and `seed` are overridden per cell.
    pub params: ProtocolParams,
    pub algos: Vec<Algo>,
    pub eps: Vec<f64>,
    pub runs: usize,
    /// Base of the per-cell server noise seeds.
    pub noise_seed: u64,
}

fn cell_noise_seed(base: u64, algo: Algo, eps_index: usize, run: usize) -> u64 {
    let tag = ((run as u64) << 16) | ((eps_index as u64) << 4) | algo as u64;
    SeededRng::new(base).word_at(Stream::Custom { tag }, 0)
}

/// Run every `(algo, eps, run)` cell in-process. Run `r` uses seed
/// `params.seed + r` for partitioning and initialization, shared by all
/// algorithms and budgets.
pub fn sweep(cfg: &SweepConfig, data: &Dataset) -> Result<Vec<SweepRow>> {
    let mut cells = Vec::new();
    for run in 0..cfg.runs {
        for (ei, &eps) in cfg.eps.iter().enumerate() {
            for &algo in &cfg.algos {
                cells.push((algo, ei, eps, run));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(algo, ei, eps, run)| {
            let seed = cfg.params.seed.wrapping_add(run as u64);
            let params = ProtocolParams { epsilon: eps, seed, ..cfg.params.clone() };
            let exp = Experiment::new(algo, &params, data)?;
            let source = NoiseSource::Seeded(cell_noise_seed(cfg.noise_seed, algo, ei, run));
            let out = exp.run_central(source)?;
            Ok(SweepRow {
                algo,
                eps,
                run,
                nicv: nicv(data, &out.centroids),
                iter_ms_mean: out.iter_ms_mean(),
                bytes_per_iter: out.payload_bytes_per_iteration,
                iterations: exp.plan.iterations,
                sigma: exp.plan.sigma(),
                seed,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean and 95% normal-approximation interval of one `(algo, eps)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algo: Algo,
    pub eps: f64,
    pub runs: usize,
    pub nicv_mean: f64,
    pub nicv_std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fewer than 30 runs.
    pub indicative: bool,
    /// Area under this algorithm's mean curve, repeated on each of its rows.
    pub auc: Option<f64>,
}

pub const CI_Z: f64 = 1.96;
pub const CI_MIN_RUNS: usize = 30;

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Algo, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.algo, r.eps.to_bits())).or_default().push(r.nicv);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((algo, eps), xs)| {
            let m = mean(&xs);
            let s = std_dev(&xs, m);
            let half = CI_Z * s / (xs.len() as f64).sqrt();
            SummaryRow {
                algo,
                eps: f64::from_bits(eps),
                runs: xs.len(),
                nicv_mean: m,
                nicv_std: s,
                ci_low: m - half,
                ci_high: m + half,
                indicative: xs.len() < CI_MIN_RUNS,
                auc: None,
            }
        })
        .collect();
    out.sort_by(|a, b| a.algo.cmp(&b.algo).then(a.eps.total_cmp(&b.eps)));
    for algo in Algo::ALL {
        let curve: Vec<(f64, f64)> = out.iter().filter(|r| r.algo == algo).map(|r| (r.eps, r.nicv_mean)).collect();
        if let Ok(area) = auc(&curve) {
            out.iter_mut().filter(|r| r.algo == algo).for_each(|r| r.auc = Some(area));
        }
    }
    out
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
