//! Gaussian-DP accounting.
//!
//! The whole protocol is calibrated as a single `1/sigma`-GDP mechanism. The
//! multiplier `sigma` is the smallest one whose GDP-to-DP conversion meets the
//! requested `(epsilon, delta)`; it is then split between the relative-sum and
//! count queries and spread over `T` iterations (each query is released `T`
//! times at multiplier `sigma_x * sqrt(T)`, which composes back to `sigma_x`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-iteration error target relative to the domain bound.
pub const ITERATION_ERROR_TARGET: f64 = 0.004;
pub const MIN_ITERATIONS: usize = 2;
pub const MAX_ITERATIONS: usize = 7;

/// `delta = 1 / (N * log N)` uses this logarithm.
pub fn default_delta_log(n: f64) -> f64 {
    n.ln()
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Tight `delta` of a `theta`-GDP mechanism at the given `epsilon`.
pub fn gdp_delta(epsilon: f64, theta: f64) -> f64 {
    if theta <= 0.0 {
        return 0.0;
    }
    let a = -epsilon / theta;
    let b = theta / 2.0;
    let delta = std_normal_cdf(a + b) - epsilon.exp() * std_normal_cdf(a - b);
    delta.max(0.0)
}

/// Smallest noise multiplier `sigma = 1/theta` with `gdp_delta(epsilon, theta) <= delta`.
pub fn calibrate_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    // delta(epsilon; theta) increases strictly in theta
    let mut lo = 1e-8;
    let mut hi = 100.0;
    if gdp_delta(epsilon, lo) > delta {
        return Err(Error::invalid(format!(
            "(epsilon = {epsilon}, delta = {delta}) needs theta below {lo}"
        )));
    }
    while gdp_delta(epsilon, hi) <= delta {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::invalid("bisection bracket diverged"));
        }
    }
    while (hi - lo) > 1e-9 * lo {
        let mid = 0.5 * (lo + hi);
        if gdp_delta(epsilon, mid) <= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.0 / lo)
}

/// Split `sigma` between relative sums and counts so that the count
/// multiplier is `(4d)^(1/4)` times the sum multiplier and the two compose
/// back to `sigma`.
pub fn split_sigma(sigma: f64, d: usize) -> (f64, f64) {
    let four_d = 4.0 * d as f64;
    let root = (1.0 + four_d.sqrt()).sqrt();
    let sigma_r = sigma * root / four_d.powf(0.25);
    let sigma_c = sigma * root;
    (sigma_r, sigma_c)
}

/// `1 / (N ln N)`.
pub fn default_delta(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("default delta needs N >= 2, got {n}")));
    }
    let n = n as f64;
    Ok(1.0 / (n * default_delta_log(n)))
}

pub fn clamp_iterations(raw: f64) -> usize {
    if !(raw >= MIN_ITERATIONS as f64) {
        MIN_ITERATIONS
    } else if raw >= MAX_ITERATIONS as f64 {
        MAX_ITERATIONS
    } else {
        raw.floor() as usize
    }
}

/// Unclamped iteration bound `4 N^2 c / (k^3 eta^2 sigma^2 (1 + sqrt(4d))^2)`.
pub fn raw_iterations(n: usize, k: usize, d: usize, sigma: f64, eta: f64) -> f64 {
    let n = n as f64;
    let k = k as f64;
    let tail = 1.0 + (4.0 * d as f64).sqrt();
    4.0 * n * n * ITERATION_ERROR_TARGET / (k.powi(3) * eta * eta * sigma * sigma * tail * tail)
}

/// Iteration count from the error heuristic, clamped to `[2, 7]`. An explicit
/// override bypasses the heuristic and is only floored at 1.
pub fn choose_iterations(
    n: usize,
    k: usize,
    d: usize,
    sigma: f64,
    eta: f64,
    override_iterations: Option<usize>,
) -> usize {
    match override_iterations {
        Some(t) => t.max(1),
        None => clamp_iterations(raw_iterations(n, k, d, sigma, eta)),
    }
}

/// Calibrated noise for the radius-constrained relative-sum mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub sigma_r: f64,
    pub sigma_c: f64,
    pub iterations: usize,
}

impl NoisePlan {
    pub fn new(
        epsilon: f64,
        delta: f64,
        n: usize,
        k: usize,
        d: usize,
        eta: f64,
        override_iterations: Option<usize>,
    ) -> Result<Self> {
        let sigma = calibrate_sigma(epsilon, delta)?;
        let (sigma_r, sigma_c) = split_sigma(sigma, d);
        let iterations = choose_iterations(n, k, d, sigma, eta, override_iterations);
        Ok(NoisePlan { epsilon, delta, sigma, sigma_r, sigma_c, iterations })
    }

    /// `(std_R, std_C)` for an iteration whose sensitivity radius is `eta_t`.
    pub fn noise_std(&self, eta_t: f64) -> (f64, f64) {
        let root_t = (self.iterations as f64).sqrt();
        (self.sigma_r * eta_t * root_t, self.sigma_c * root_t)
    }

    /// GDP parameter obtained by composing every per-iteration release.
    pub fn composed_theta(&self) -> f64 {
        let t = self.iterations as f64;
        let per_r = 1.0 / (self.sigma_r * t.sqrt());
        let per_c = 1.0 / (self.sigma_c * t.sqrt());
        (t * per_r * per_r + t * per_c * per_c).sqrt()
    }
}
