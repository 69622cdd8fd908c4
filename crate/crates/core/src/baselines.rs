//! Algorithm plans. Every algorithm runs on the same client/server machinery;
//! they differ only in the assignment radius, the sum semantics, clipping and
//! the noise the server adds each round.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{compute_radius, domain_diagonal, CentroidState, RadiusSchedule, UpdateRule};
use crate::dpcalib::{
    calibrate_sigma, choose_iterations, clamp_iterations, default_delta, NoisePlan, ITERATION_ERROR_TARGET,
    MAX_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::msa::{Noise, RoundNoise, RoundPlan, RunPlan};
use crate::params::ProtocolParams;
use crate::ringcodec::FixedPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algo {
    /// Non-private federated Lloyd.
    #[serde(rename = "lloyd")]
    Lloyd,
    /// Laplace noise on absolute sums and counts.
    #[serde(rename = "su")]
    SuLloyd,
    /// Gaussian noise on absolute sums and counts.
    #[serde(rename = "gauss")]
    GLloyd,
    /// Radius-constrained relative sums with Gaussian noise.
    #[serde(rename = "fast")]
    FastLloyd,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Lloyd, Algo::SuLloyd, Algo::GLloyd, Algo::FastLloyd];

    /// Short name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Algo::Lloyd => "lloyd",
            Algo::SuLloyd => "su",
            Algo::GLloyd => "gauss",
            Algo::FastLloyd => "fast",
        }
    }

    pub fn is_private(self) -> bool {
        self != Algo::Lloyd
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lloyd" => Ok(Algo::Lloyd),
            "su" | "sulloyd" => Ok(Algo::SuLloyd),
            "gauss" | "glloyd" => Ok(Algo::GLloyd),
            "fast" | "fastlloyd" => Ok(Algo::FastLloyd),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected lloyd, su, gauss or fast)"))),
        }
    }
}

/// Calibrated noise parameters of one algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase")]
pub enum Calibration {
    None,
    /// Gaussian multipliers; `sigma_sums` and `sigma_counts` compose to `sigma`.
    Gaussian { sigma: f64, sigma_sums: f64, sigma_counts: f64 },
    /// Per-iteration Laplace budgets.
    Laplace { epsilon_sums: f64, epsilon_counts: f64 },
}

/// Resolved plan of one algorithm on one dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoPlan {
    pub algo: Algo,
    pub iterations: usize,
    /// Total budget; 0 for non-private runs.
    pub epsilon: f64,
    /// 0 for pure-DP and non-private runs.
    pub delta: f64,
    pub calibration: Calibration,
    pub radius: Option<RadiusSchedule>,
    pub run: RunPlan,
    /// Non-fatal plan-time findings, such as a ring too narrow for the data.
    pub warnings: Vec<String>,
}

impl AlgoPlan {
    /// GDP multiplier, when the algorithm has one.
    pub fn sigma(&self) -> Option<f64> {
        match self.calibration {
            Calibration::Gaussian { sigma, .. } => Some(sigma),
            _ => None,
        }
    }

    /// Same plan with every noise draw removed.
    pub fn without_noise(mut self) -> Self {
        self.run = self.run.without_noise();
        self
    }

    /// Same plan with a different assignment and clipping radius.
    pub fn with_radius(mut self, radius: RadiusSchedule) -> Self {
        for (t, r) in self.run.rounds.iter_mut().enumerate() {
            let eta = radius.at(t as u32 + 1);
            r.assign_radius = Some(eta);
            r.clip_radius = eta;
        }
        self.radius = Some(radius);
        self
    }
}

/// Iteration bound of the Gaussian absolute-sum mechanism.
pub fn glloyd_raw_iterations(n: usize, k: usize, d: usize, sigma: f64, rho: f64) -> f64 {
    let (n, k, d) = (n as f64, k as f64, d as f64);
    let tail = 2.0 * rho + d.sqrt();
    n * n * ITERATION_ERROR_TARGET / (k.powi(3) * d * sigma * sigma * tail * tail)
}

/// `(sigma_sums, sigma_counts)` with `sigma_counts / sigma_sums = sqrt(sqrt(d) / (2 rho))`.
pub fn glloyd_split(sigma: f64, d: usize, rho: f64) -> (f64, f64) {
    let ratio_sq = (d as f64).sqrt() / (2.0 * rho);
    (sigma * (1.0 + 1.0 / ratio_sq).sqrt(), sigma * (1.0 + ratio_sq).sqrt())
}

/// Count-to-sum budget ratio of the Laplace baseline.
pub fn sulloyd_ratio(d: usize, bound: f64, rho: f64) -> f64 {
    let d = d as f64;
    (4.0 * rho * rho / (d.powi(3) * bound * bound)).cbrt()
}

/// `(epsilon_sums, epsilon_counts)` of one iteration.
pub fn sulloyd_split(epsilon: f64, iterations: usize, d: usize, bound: f64, rho: f64) -> (f64, f64) {
    let r = sulloyd_ratio(d, bound, rho);
    let per = epsilon / iterations as f64;
    (per / (1.0 + r), r * per / (1.0 + r))
}

/// Iteration bound of the Laplace baseline.
pub fn sulloyd_raw_iterations(n: usize, k: usize, d: usize, epsilon: f64, bound: f64, rho: f64) -> f64 {
    let r = sulloyd_ratio(d, bound, rho);
    let (n, k, df) = (n as f64, k as f64, d as f64);
    let a = 2.0 * df.powi(3) * bound * bound;
    let c = 8.0 * rho * rho;
    (ITERATION_ERROR_TARGET * n * n * epsilon * epsilon / (k.powi(3) * (1.0 + r).powi(2) * (a + c / (r * r)))).sqrt()
}

fn resolve_delta(params: &ProtocolParams, n_total: usize) -> Result<f64> {
    match params.delta {
        Some(d) => Ok(d),
        None => default_delta(n_total),
    }
}

/// Plan `algo` for a run over `n_total` points.
pub fn plan(algo: Algo, params: &ProtocolParams, n_total: usize) -> Result<AlgoPlan> {
    params.validate()?;
    if algo.is_private() && !(params.epsilon > 0.0 && params.epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive and finite, got {}", params.epsilon)));
    }
    let codec = FixedPoint::new(params.q, params.width)?;
    let (k, d, bound) = (params.k, params.d, params.bound);
    let rho = params.rho();
    let beta = domain_diagonal(d, bound);
    let absolute = UpdateRule { relative: false, clip: false, bound };
    let make_rounds = |t: usize, f: &dyn Fn(u32) -> RoundPlan| (1..=t as u32).map(f).collect::<Vec<_>>();

    let (iterations, epsilon, delta, calibration, radius, rule, rounds) = match algo {
        Algo::Lloyd => {
            let t = params.iterations.map_or(MAX_ITERATIONS, |t| t.max(1));
            let rounds =
                make_rounds(t, &|_| RoundPlan { assign_radius: None, clip_radius: beta, noise: RoundNoise::NONE });
            (t, 0.0, 0.0, Calibration::None, None, absolute, rounds)
        }
        Algo::FastLloyd => {
            let delta = resolve_delta(params, n_total)?;
            let radius = compute_radius(k, d, bound, params.alpha, params.radius_policy);
            let np = NoisePlan::new(params.epsilon, delta, n_total, k, d, radius.eta, params.iterations)?;
            let rounds = make_rounds(np.iterations, &|round| {
                let eta = radius.at(round);
                let (std_r, std_c) = np.noise_std(eta);
                RoundPlan {
                    assign_radius: Some(eta),
                    clip_radius: eta,
                    noise: RoundNoise { sums: Noise::Gaussian { std: std_r }, counts: Noise::Gaussian { std: std_c } },
                }
            });
            let cal = Calibration::Gaussian { sigma: np.sigma, sigma_sums: np.sigma_r, sigma_counts: np.sigma_c };
            let rule = UpdateRule { relative: true, clip: true, bound };
            (np.iterations, params.epsilon, delta, cal, Some(radius), rule, rounds)
        }
        Algo::GLloyd => {
            let delta = resolve_delta(params, n_total)?;
            let sigma = calibrate_sigma(params.epsilon, delta)?;
            let (sigma_s, sigma_c) = glloyd_split(sigma, d, rho);
            let t = match params.iterations {
                Some(t) => t.max(1),
                None => clamp_iterations(glloyd_raw_iterations(n_total, k, d, sigma, rho)),
            };
            let root_t = (t as f64).sqrt();
            let noise = RoundNoise {
                sums: Noise::Gaussian { std: sigma_s * (d as f64).sqrt() * bound * root_t },
                counts: Noise::Gaussian { std: sigma_c * root_t },
            };
            let rounds = make_rounds(t, &|_| RoundPlan { assign_radius: None, clip_radius: beta, noise });
            let cal = Calibration::Gaussian { sigma, sigma_sums: sigma_s, sigma_counts: sigma_c };
            (t, params.epsilon, delta, cal, None, absolute, rounds)
        }
        Algo::SuLloyd => {
            let t = match params.iterations {
                Some(t) => t.max(1),
                None => clamp_iterations(sulloyd_raw_iterations(n_total, k, d, params.epsilon, bound, rho)),
            };
            let (eps_s, eps_c) = sulloyd_split(params.epsilon, t, d, bound, rho);
            let noise = RoundNoise {
                sums: Noise::Laplace { scale: d as f64 * bound / eps_s },
                counts: Noise::Laplace { scale: 1.0 / eps_c },
            };
            let rounds = make_rounds(t, &|_| RoundPlan { assign_radius: None, clip_radius: beta, noise });
            let cal = Calibration::Laplace { epsilon_sums: eps_s, epsilon_counts: eps_c };
            (t, params.epsilon, 0.0, cal, None, absolute, rounds)
        }
    };

    let run = RunPlan { k, d, parties: params.clients, codec, rule, rounds };
    let warnings = ring_warnings(&run, n_total, bound);
    Ok(AlgoPlan { algo, iterations, epsilon, delta, calibration, radius, run, warnings })
}

/// Flag rounds whose worst-case aggregate could leave the ring.
fn ring_warnings(run: &RunPlan, n_total: usize, bound: f64) -> Vec<String> {
    let limit = run.codec.limit() / run.codec.scale();
    let n = n_total as f64;
    let mut warnings = Vec::new();
    for (t, r) in run.rounds.iter().enumerate() {
        let per_point = if run.rule.relative { r.assign_radius.unwrap_or(2.0 * bound) } else { bound };
        let sums = n * per_point + 6.0 * r.noise.sums.std();
        let counts = n + 6.0 * r.noise.counts.std();
        if sums.max(counts) >= limit {
            warnings.push(format!(
                "round {}: aggregates up to {:.3e} may overflow the {}-bit ring (limit {:.3e})",
                t + 1,
                sums.max(counts),
                run.codec.width.bits(),
                limit
            ));
        }
    }
    warnings
}

/// The data-independent starting point shared by every algorithm.
pub fn initial_centroids(params: &ProtocolParams) -> CentroidState {
    crate::cluster::sphere_packing_init(params.k, params.d, params.bound, &crate::rng::SeededRng::new(params.seed)).0
}

/// FastLloyd iteration count for these parameters, for reporting.
pub fn fastlloyd_iterations(params: &ProtocolParams, n_total: usize) -> Result<usize> {
    let delta = resolve_delta(params, n_total)?;
    let radius = compute_radius(params.k, params.d, params.bound, params.alpha, params.radius_policy);
    let sigma = calibrate_sigma(params.epsilon, delta)?;
    Ok(choose_iterations(n_total, params.k, params.d, sigma, radius.eta, params.iterations))
}
