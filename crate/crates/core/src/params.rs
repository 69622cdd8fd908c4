//! Run configuration shared by clients, the aggregation server and the
//! evaluation harness.
//!
//! Everything that makes a run reproducible lives in [`ProtocolParams`]. The
//! flat `key = value` config format uses the struct's field names as keys.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius schedule strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusPolicy {
    /// The steady radius is enforced from the first iteration.
    Constant,
    /// Half the domain diagonal in the first iteration, the steady radius after.
    Step,
}

impl FromStr for RadiusPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" => Ok(RadiusPolicy::Constant),
            "step" => Ok(RadiusPolicy::Step),
            other => Err(Error::Config(format!("unknown radius policy `{other}`"))),
        }
    }
}

impl fmt::Display for RadiusPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadiusPolicy::Constant => "constant",
            RadiusPolicy::Step => "step",
        })
    }
}

/// Bit width of the aggregation ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RingWidth {
    W32,
    W64,
}

impl RingWidth {
    pub fn bits(self) -> u32 {
        match self {
            RingWidth::W32 => 32,
            RingWidth::W64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(RingWidth::W32),
            64 => Ok(RingWidth::W64),
            other => Err(Error::invalid(format!("ring width must be 32 or 64, got {other}"))),
        }
    }

    /// Bit mask selecting the low `bits()` bits of a word.
    pub fn word_mask(self) -> u64 {
        match self {
            RingWidth::W32 => u32::MAX as u64,
            RingWidth::W64 => u64::MAX,
        }
    }
}

/// Everything needed to make a run deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Number of clusters.
    pub k: usize,
    /// Dimension of every point.
    pub d: usize,
    /// Total privacy budget.
    pub epsilon: f64,
    /// Failure probability; `None` resolves to `1/(N ln N)` at plan time.
    pub delta: Option<f64>,
    /// Half-width of the normalized domain `[-bound, bound]^d`.
    pub bound: f64,
    /// Radius scale factor.
    pub alpha: f64,
    pub radius_policy: RadiusPolicy,
    /// Fixed-point fraction bits.
    pub q: u32,
    pub width: RingWidth,
    /// Number of clients.
    pub clients: usize,
    /// Seed shared by all clients (never by the server).
    pub seed: u64,
    /// Fixed iteration count bypassing the heuristic.
    pub iterations: Option<usize>,
    /// Expected centroid displacement used by the absolute-sum baselines'
    /// budget split. `None` means `bound / 2`.
    pub rho: Option<f64>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            k: 2,
            d: 2,
            epsilon: 1.0,
            delta: None,
            bound: 1.0,
            alpha: 0.8,
            radius_policy: RadiusPolicy::Step,
            q: 16,
            width: RingWidth::W64,
            clients: 2,
            seed: 0,
            iterations: None,
            rho: None,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if self.clients == 0 {
            return Err(Error::invalid("at least one client is required"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::invalid(format!("bound must be positive, got {}", self.bound)));
        }
        if self.q >= self.width.bits() {
            return Err(Error::invalid(format!(
                "q = {} must be smaller than the ring width {}",
                self.q,
                self.width.bits()
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
            }
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0) {
                return Err(Error::invalid(format!("rho must be positive, got {rho}")));
            }
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(self.bound / 2.0)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
        }
        fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
            match value {
                "" | "none" | "auto" => Ok(None),
                v => num(key, v).map(Some),
            }
        }

        let value = value.trim();
        match key.trim() {
            "k" => self.k = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "delta" => self.delta = optional(key, value)?,
            "bound" => self.bound = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "radius_policy" => self.radius_policy = value.parse()?,
            "q" => self.q = num(key, value)?,
            "width" => self.width = RingWidth::from_bits(num(key, value)?)?,
            "clients" => self.clients = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "iterations" => self.iterations = optional(key, value)?,
            "rho" => self.rho = optional(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` config. Blank lines and `#` comments are skipped.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut params = ProtocolParams::default();
        params.apply_config_str(text)?;
        Ok(params)
    }

    pub fn apply_config_str(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    /// Render in the config format, defaults included.
    pub fn to_config_string(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "auto".to_string(), |v| v.to_string())
        }
        format!(
            "k = {}\nd = {}\nepsilon = {}\ndelta = {}\nbound = {}\nalpha = {}\nradius_policy = {}\nq = {}\nwidth = {}\nclients = {}\nseed = {}\niterations = {}\nrho = {}\n",
            self.k,
            self.d,
            self.epsilon,
            opt(&self.delta),
            self.bound,
            self.alpha,
            self.radius_policy,
            self.q,
            self.width.bits(),
            self.clients,
            self.seed,
            opt(&self.iterations),
            opt(&self.rho),
        )
    }
}
