//! Synthetic clustered datasets.
//!
//! Clusters are isotropic Gaussians. Centres are drawn uniformly from
//! `[-1, 1]^d` and rejected until every pair is at least
//! `(1 + separation) * (r_i + r_j)` apart, where `r_i = std_i * sqrt(d)`.
//! The points are normalized to `[-B, B]^d`, then outliers are drawn
//! uniformly from the same box.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_dataset, Dataset};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

const PLACEMENT_ATTEMPTS: usize = 10_000;
const SHRINK_RETRIES: usize = 50;
const SHRINK_FACTOR: f64 = 0.9;

/// Label of outlier points.
pub const OUTLIER_LABEL: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeRatio {
    Balanced,
    /// Cluster `i` (1-based) gets a share proportional to `i`.
    Linear,
}

impl FromStr for SizeRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "balanced" => Ok(SizeRatio::Balanced),
            "linear" => Ok(SizeRatio::Linear),
            other => Err(Error::Config(format!("unknown size ratio `{other}`"))),
        }
    }
}

impl fmt::Display for SizeRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeRatio::Balanced => "balanced",
            SizeRatio::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    /// Minimum gap in units of the summed cluster radii, minus one.
    pub separation: f64,
    /// Typical per-coordinate cluster std before normalization.
    pub spread: f64,
    pub sizes: SizeRatio,
    /// `None` draws the count uniformly from `0..=100`.
    pub outliers: Option<usize>,
    pub bound: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 10_000,
            k: 2,
            d: 2,
            separation: 0.2,
            spread: 0.3,
            sizes: SizeRatio::Linear,
            outliers: None,
            bound: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Parse `key=value` pairs separated by commas, e.g. `k=2,d=2,n=10000`.
    /// Keys: `n`, `k`, `d`, `sep`, `spread`, `sizes`, `outliers`, `bound`, `seed`.
    pub fn parse_with(text: &str, mut base: SynthSpec) -> Result<Self> {
        for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn fmt::Display| Error::Config(format!("synth `{key}`: {e}"));
            match key {
                "n" => base.n = value.parse().map_err(|e| bad(&e))?,
                "k" => base.k = value.parse().map_err(|e| bad(&e))?,
                "d" => base.d = value.parse().map_err(|e| bad(&e))?,
                "sep" | "separation" => base.separation = value.parse().map_err(|e| bad(&e))?,
                "spread" => base.spread = value.parse().map_err(|e| bad(&e))?,
                "sizes" => base.sizes = value.parse()?,
                "outliers" => {
                    base.outliers = if value == "random" { None } else { Some(value.parse().map_err(|e| bad(&e))?) }
                }
                "bound" => base.bound = value.parse().map_err(|e| bad(&e))?,
                "seed" => base.seed = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Config(format!("unknown synth key `{other}`"))),
            }
        }
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(Error::invalid("synthetic data needs k >= 1 and d >= 1"));
        }
        if !(self.spread > 0.0) || !(self.bound > 0.0) || !self.separation.is_finite() {
            return Err(Error::invalid("spread and bound must be positive and separation finite"));
        }
        Ok(())
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthSpec::parse_with(s, SynthSpec::default())
    }
}

/// A generated dataset and its generating labels and centres.
#[derive(Debug, Clone, PartialEq)]
pub struct Synth {
    pub data: Dataset,
    /// Cluster index per point, [`OUTLIER_LABEL`] for outliers.
    pub labels: Vec<i64>,
    /// Generating centres mapped into the normalized domain.
    pub centers: Vec<Vec<f64>>,
}

/// Split `total` into `k` sizes following `ratio`.
pub fn cluster_sizes(total: usize, k: usize, ratio: SizeRatio) -> Vec<usize> {
    let weights: Vec<usize> = match ratio {
        SizeRatio::Balanced => vec![1; k],
        SizeRatio::Linear => (1..=k).collect(),
    };
    let sum: usize = weights.iter().sum();
    let mut sizes: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let short = total - sizes.iter().sum::<usize>();
    for s in sizes.iter_mut().take(short) {
        *s += 1;
    }
    sizes
}

fn place_centers(k: usize, d: usize, separation: f64, radii: &[f64], rng: &mut impl Rng) -> Option<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let ok = centers.iter().enumerate().all(|(j, o)| {
                let dist = c.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                dist >= (1.0 + separation) * (radii[i] + radii[j])
            });
            if ok {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(centers)
}

pub fn generate_synth(spec: &SynthSpec) -> Result<Synth> {
    spec.validate()?;
    let seeded = SeededRng::new(spec.seed);
    let mut layout = seeded.stream(Stream::Synth { part: 0 });
    let (k, d) = (spec.k, spec.d);
    let outliers = match spec.outliers {
        Some(o) => o,
        None => layout.random_range(0..=100),
    }
    .min(spec.n);
    let mut stds: Vec<f64> = (0..k).map(|_| spec.spread * layout.random_range(0.5..1.5)).collect();
    let mut centers = None;
    for _ in 0..SHRINK_RETRIES {
        let radii: Vec<f64> = stds.iter().map(|s| s * (d as f64).sqrt()).collect();
        centers = place_centers(k, d, spec.separation, &radii, &mut layout);
        if centers.is_some() {
            break;
        }
        stds.iter_mut().for_each(|s| *s *= SHRINK_FACTOR);
    }
    let centers = centers.ok_or_else(|| {
        Error::invalid(format!("cannot place {k} clusters with separation {} in {d} dimensions", spec.separation))
    })?;

    let sizes = cluster_sizes(spec.n - outliers, k, spec.sizes);
    let mut points = seeded.stream(Stream::Synth { part: 1 });
    let mut values = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    for (j, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for h in 0..d {
                let z: f64 = StandardNormal.sample(&mut points);
                values.push(centers[j][h] + stds[j] * z);
            }
            labels.push(j as i64);
        }
    }
    // normalize the clustered points (and their centres) to the domain
    let mut raw = Dataset::new(d, values)?;
    for c in &centers {
        raw.push(c);
    }
    let (mut data, map) = normalize_dataset(&raw, spec.bound)?;
    let centers_norm: Vec<Vec<f64>> = centers.iter().map(|c| map.apply(c)).collect();
    data = data.select(&(0..data.n() - k).collect::<Vec<_>>());

    let mut noise = seeded.stream(Stream::Synth { part: 2 });
    for _ in 0..outliers {
        let p: Vec<f64> = (0..d).map(|_| noise.random_range(-spec.bound..=spec.bound)).collect();
        data.push(&p);
        labels.push(OUTLIER_LABEL);
    }
    Ok(Synth { data, labels, centers: centers_norm })
}

/// Balanced clusters without outliers.
pub fn generate_timesynth(n: usize, k: usize, d: usize, seed: u64) -> Result<Synth> {
    generate_synth(&SynthSpec { n, k, d, sizes: SizeRatio::Balanced, outliers: Some(0), seed, ..SynthSpec::default() })
}
