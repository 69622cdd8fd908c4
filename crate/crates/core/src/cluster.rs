//! Client-side clustering steps: sphere-packing initialization,
//! radius-constrained assignment, local updates, centroid reconstruction,
//! radius clipping and folding. Nothing here adds noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::params::RadiusPolicy;
use crate::rng::{SeededRng, Stream};

/// Noisy counts below this hold the previous centroid.
pub const MIN_COUNT: f64 = 1.0;

const PACKING_SEARCH_STEPS: u32 = 30;
const PACKING_ATTEMPTS: usize = 100;

/// `k` centroids of dimension `d`, row-major, and the iteration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidState {
    pub k: usize,
    pub d: usize,
    pub centroids: Vec<f64>,
    pub iteration: usize,
}

impl CentroidState {
    pub fn new(k: usize, d: usize, centroids: Vec<f64>) -> Self {
        assert_eq!(centroids.len(), k * d, "centroid matrix must be k x d");
        CentroidState { k, d, centroids, iteration: 0 }
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.centroids.chunks_exact(self.d)
    }

    pub fn within(&self, bound: f64) -> bool {
        self.centroids.iter().all(|c| c.abs() <= bound)
    }

    /// Largest absolute coordinate difference to `other`.
    pub fn max_abs_diff(&self, other: &CentroidState) -> f64 {
        self.centroids
            .iter()
            .zip(&other.centroids)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Assignment radius per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSchedule {
    pub policy: RadiusPolicy,
    /// Steady-state radius.
    pub eta: f64,
    /// Radius of the first iteration.
    pub eta0: f64,
    /// Domain diagonal.
    pub beta: f64,
}

impl RadiusSchedule {
    /// Radius in force at `round` (1-based).
    pub fn at(&self, round: u32) -> f64 {
        if round <= 1 {
            self.eta0
        } else {
            self.eta
        }
    }

    /// A radius no in-domain distance can reach; the constraint never binds.
    pub fn vacuous(d: usize, bound: f64) -> Self {
        let beta = domain_diagonal(d, bound);
        RadiusSchedule { policy: RadiusPolicy::Constant, eta: beta, eta0: beta, beta }
    }
}

pub fn domain_diagonal(d: usize, bound: f64) -> f64 {
    (d as f64).sqrt() * 2.0 * bound
}

/// `eta = alpha * beta / (2 k^(1/d))` with `beta` the domain diagonal.
pub fn compute_radius(k: usize, d: usize, bound: f64, alpha: f64, policy: RadiusPolicy) -> RadiusSchedule {
    let beta = domain_diagonal(d, bound);
    let eta = alpha * beta / (2.0 * (k as f64).powf(1.0 / d as f64));
    let eta0 = match policy {
        RadiusPolicy::Constant => eta,
        RadiusPolicy::Step => beta / 2.0,
    };
    RadiusSchedule { policy, eta, eta0, beta }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn try_pack(k: usize, d: usize, bound: f64, a: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
    let half = bound - a;
    let min_sq = 4.0 * a * a;
    let mut placed: Vec<f64> = Vec::with_capacity(k * d);
    let mut candidate = vec![0.0; d];
    for _ in 0..k {
        let mut ok = false;
        for _ in 0..PACKING_ATTEMPTS {
            for c in candidate.iter_mut() {
                *c = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
            }
            if placed.chunks_exact(d).all(|p| sq_dist(p, &candidate) >= min_sq) {
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
        placed.extend_from_slice(&candidate);
    }
    Some(placed)
}

/// Data-independent initialization: `k` centroids at least `a` from the
/// boundary and `2a` from each other, with `a` maximized by bisection.
/// Returns the centroids and the radius found.
pub fn sphere_packing_init(k: usize, d: usize, bound: f64, rng: &SeededRng) -> (CentroidState, f64) {
    let mut lo = 0.0;
    let mut hi = bound;
    let mut best = None;
    for step in 0..PACKING_SEARCH_STEPS {
        let mid = 0.5 * (lo + hi);
        match try_pack(k, d, bound, mid, &mut rng.stream(Stream::Init { step })) {
            Some(c) => {
                lo = mid;
                best = Some(c);
            }
            None => hi = mid,
        }
    }
    let centroids = best.unwrap_or_else(|| {
        try_pack(k, d, bound, 0.0, &mut rng.stream(Stream::Init { step: PACKING_SEARCH_STEPS }))
            .expect("radius zero always packs")
    });
    (CentroidState::new(k, d, centroids), lo)
}

/// Nearest centroid (lowest index on ties) and its distance.
pub fn nearest(point: &[f64], centroids: &CentroidState) -> (usize, f64) {
    let (j, sq) = nearest_sq(point, centroids);
    (j, sq.sqrt())
}

/// Nearest centroid and its squared distance.
pub fn nearest_sq(point: &[f64], centroids: &CentroidState) -> (usize, f64) {
    let mut best = 0;
    let mut best_sq = f64::INFINITY;
    for (j, c) in centroids.rows().enumerate() {
        let dist = sq_dist(point, c);
        if dist < best_sq {
            best_sq = dist;
            best = j;
        }
    }
    (best, best_sq)
}

/// Label each point with its nearest centroid when that centroid is strictly
/// closer than `radius`, `None` (discarded) otherwise. `radius = None`
/// assigns every point.
pub fn assign(points: &Dataset, centroids: &CentroidState, radius: Option<f64>) -> Vec<Option<usize>> {
    points
        .points()
        .map(|x| {
            let (j, dist) = nearest(x, centroids);
            match radius {
                Some(eta) if dist >= eta => None,
                _ => Some(j),
            }
        })
        .collect()
}

/// Per-cluster sums and counts computed by one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub k: usize,
    pub d: usize,
    /// `k x d`, row-major.
    pub sums: Vec<f64>,
    pub counts: Vec<f64>,
}

impl LocalUpdate {
    pub fn zeros(k: usize, d: usize) -> Self {
        LocalUpdate { k, d, sums: vec![0.0; k * d], counts: vec![0.0; k] }
    }

    pub fn sum_row(&self, j: usize) -> &[f64] {
        &self.sums[j * self.d..(j + 1) * self.d]
    }
}

/// Aggregated (possibly noisy) sums and counts, as decoded by every client.
pub type GlobalUpdate = LocalUpdate;

/// Sum each cluster's points. With `relative`, each point contributes its
/// offset from the cluster's previous centroid instead of itself.
pub fn local_update(
    points: &Dataset,
    labels: &[Option<usize>],
    centroids: &CentroidState,
    relative: bool,
) -> LocalUpdate {
    let (k, d) = (centroids.k, centroids.d);
    let mut update = LocalUpdate::zeros(k, d);
    for (x, label) in points.points().zip(labels) {
        let Some(j) = *label else { continue };
        let row = &mut update.sums[j * d..(j + 1) * d];
        if relative {
            let c = centroids.centroid(j);
            for h in 0..d {
                row[h] += x[h] - c[h];
            }
        } else {
            for h in 0..d {
                row[h] += x[h];
            }
        }
        update.counts[j] += 1.0;
    }
    update
}

/// Fold `x` into `[-bound, bound]`. In-range values are returned unchanged;
/// others go through `y = (x + B) mod 2B`, `y = 2B - y` when `y > B`,
/// result `y - B`.
pub fn fold(x: f64, bound: f64) -> f64 {
    if x.abs() <= bound {
        return x;
    }
    let period = 2.0 * bound;
    let mut y = (x + bound).rem_euclid(period);
    if y > bound {
        y = period - y;
    }
    (y - bound).clamp(-bound, bound)
}

/// Rescale `displacement` in place so its norm is at most `radius`.
pub fn clip_displacement(displacement: &mut [f64], radius: f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut current = norm(displacement);
    let mut scale = radius / current;
    while current > radius {
        for v in displacement.iter_mut() {
            *v *= scale;
        }
        current = norm(displacement);
        scale = 1.0 - f64::EPSILON;
    }
}

/// How the aggregated update turns into new centroids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    /// Sums are offsets from the previous centroids.
    pub relative: bool,
    /// Clip each centroid's displacement to the iteration's radius.
    pub clip: bool,
    pub bound: f64,
}

/// New centroids from aggregated sums and counts. Clusters whose count is
/// below [`MIN_COUNT`] keep their previous centroid; every coordinate is
/// folded into the domain.
pub fn reconstruct_centroids(
    noisy: &GlobalUpdate,
    prev: &CentroidState,
    radius: f64,
    rule: UpdateRule,
) -> CentroidState {
    let (k, d) = (prev.k, prev.d);
    let mut next = prev.centroids.clone();
    let mut step = vec![0.0; d];
    for j in 0..k {
        let count = noisy.counts[j];
        if !(count >= MIN_COUNT) {
            continue;
        }
        let old = prev.centroid(j);
        let sums = noisy.sum_row(j);
        for h in 0..d {
            let target = if rule.relative { old[h] + sums[h] / count } else { sums[h] / count };
            step[h] = target - old[h];
        }
        if rule.clip {
            clip_displacement(&mut step, radius);
        }
        for h in 0..d {
            let value = if rule.clip || rule.relative { old[h] + step[h] } else { sums[h] / count };
            next[j * d + h] = fold(value, rule.bound);
        }
    }
    CentroidState { k, d, centroids: next, iteration: prev.iteration + 1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn radius_examples() {
        let r = compute_radius(1, 3, 1.0, 1.0, RadiusPolicy::Constant);
        assert!((r.eta - r.beta / 2.0).abs() < 1e-15);
        let r = compute_radius(4, 2, 1.0, 0.8, RadiusPolicy::Step);
        assert!((r.beta - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert!((r.eta - 0.4 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.eta0, r.beta / 2.0);
        assert_eq!(r.at(1), r.eta0);
        assert_eq!(r.at(2), r.eta);
        let high = compute_radius(4, 4096, 1.0, 0.8, RadiusPolicy::Constant);
        assert!((high.eta / (0.8 * high.beta / 2.0) - 1.0).abs() < 1e-3);
        assert_eq!(high.eta0, high.eta);
    }

    #[test]
    fn single_centroid_goes_to_origin() {
        let (c, a) = sphere_packing_init(1, 3, 1.0, &SeededRng::new(1));
        assert!(a > 0.999);
        assert!(c.centroids.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn two_centroids_on_a_line() {
        for seed in 0..10 {
            let (c, a) = sphere_packing_init(2, 1, 1.0, &SeededRng::new(seed));
            assert!((0.35..=0.5).contains(&a), "seed {seed}: a = {a}");
            assert!((c.centroids[0] - c.centroids[1]).abs() >= 2.0 * a - 1e-12);
            assert!(c.centroids.iter().all(|v| v.abs() <= 1.0 - a + 1e-12));
        }
    }

    #[test]
    fn packing_is_deterministic_and_separated() {
        let rng = SeededRng::new(77);
        let (c1, a1) = sphere_packing_init(8, 16, 1.0, &rng);
        let (c2, a2) = sphere_packing_init(8, 16, 1.0, &rng);
        assert_eq!(c1, c2);
        assert_eq!(a1, a2);
        for i in 0..8 {
            for j in i + 1..8 {
                assert!(sq_dist(c1.centroid(i), c1.centroid(j)).sqrt() >= 2.0 * a1);
            }
        }
    }

    fn state(rows: &[&[f64]]) -> CentroidState {
        let d = rows[0].len();
        CentroidState::new(rows.len(), d, rows.iter().flat_map(|r| r.to_vec()).collect())
    }

    #[test]
    fn assignment_rules() {
        let c = state(&[&[0.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0], &[0.0, 0.5]]);
        let pts = Dataset::from_rows(&[[0.0, 0.5], [0.0, 1.0], [0.5, -0.5]]).unwrap();
        let labels = assign(&pts, &c, Some(0.5));
        assert_eq!(labels[0], Some(3));
        // exactly at the radius from its nearest centroid
        assert_eq!(labels[1], None);
        let tie = Dataset::from_rows(&[[0.5, 0.0]]).unwrap();
        assert_eq!(assign(&tie, &c, Some(1.0)), vec![Some(0)]);
        assert_eq!(assign(&pts, &c, None).iter().filter(|l| l.is_none()).count(), 0);
    }

    #[test]
    fn local_update_rules() {
        let c = state(&[&[0.0, 0.0], &[0.5, 0.5]]);
        let pts = Dataset::from_rows(&[[0.6, 0.3]]).unwrap();
        let labels = assign(&pts, &c, Some(0.5));
        let u = local_update(&pts, &labels, &c, true);
        assert_eq!(u.counts, vec![0.0, 1.0]);
        assert_eq!(u.sum_row(0), &[0.0, 0.0]);
        assert!((u.sum_row(1)[0] - 0.1).abs() < 1e-15);
        assert!((u.sum_row(1)[1] + 0.2).abs() < 1e-15);
        let abs = local_update(&pts, &labels, &c, false);
        assert_eq!(abs.sum_row(1), &[0.6, 0.3]);
    }

    #[test]
    fn fold_examples() {
        assert_eq!(fold(0.3, 1.0), 0.3);
        assert!((fold(1.2, 1.0) + 0.8).abs() < 1e-12);
        assert!((fold(-2.5, 1.0) + 0.5).abs() < 1e-12);
        assert_eq!(fold(1.0, 1.0), 1.0);
        assert_eq!(fold(-1.0, 1.0), -1.0);
    }

    const RELATIVE: UpdateRule = UpdateRule { relative: true, clip: true, bound: 1.0 };

    #[test]
    fn reconstruct_zero_update_holds() {
        let prev = state(&[&[0.2, -0.4]]);
        let noisy = GlobalUpdate { k: 1, d: 2, sums: vec![0.0, 0.0], counts: vec![5.0] };
        let next = reconstruct_centroids(&noisy, &prev, 0.3, RELATIVE);
        assert_eq!(next.centroids, prev.centroids);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn reconstruct_clips_displacement() {
        let prev = state(&[&[0.0, 0.0]]);
        // displacement (0.6, 0.8)/1 has length 1 = 2 * radius
        let noisy = GlobalUpdate { k: 1, d: 2, sums: vec![0.6, 0.8], counts: vec![1.0] };
        let next = reconstruct_centroids(&noisy, &prev, 0.5, RELATIVE);
        assert!((next.centroids[0] - 0.3).abs() < 1e-12);
        assert!((next.centroids[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_low_count_holds() {
        let prev = state(&[&[0.1], &[0.9]]);
        let noisy = GlobalUpdate { k: 2, d: 1, sums: vec![3.0, 0.5], counts: vec![0.4, -2.0] };
        assert_eq!(reconstruct_centroids(&noisy, &prev, 1.0, RELATIVE).centroids, prev.centroids);
    }

    #[test]
    fn relative_update_equals_mean_without_noise() {
        let prev = state(&[&[0.1, 0.1], &[-0.5, 0.5]]);
        let pts = Dataset::from_rows(&[[0.2, 0.3], [0.4, -0.1], [-0.6, 0.4], [0.0, 0.1]]).unwrap();
        let labels = assign(&pts, &prev, None);
        let rel = local_update(&pts, &labels, &prev, true);
        let abs = local_update(&pts, &labels, &prev, false);
        let rel_next = reconstruct_centroids(&rel, &prev, 10.0, RELATIVE);
        let abs_next = reconstruct_centroids(&abs, &prev, 10.0, UpdateRule { relative: false, clip: false, bound: 1.0 });
        for j in 0..2 {
            for h in 0..2 {
                let mean = abs.sum_row(j)[h] / abs.counts[j];
                assert!((rel_next.centroid(j)[h] - mean).abs() < 1e-12);
                assert!((abs_next.centroid(j)[h] - mean).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn fold_lands_in_range_and_is_idempotent(x in -50.0f64..50.0, bound in 0.1f64..5.0) {
            let y = fold(x, bound);
            prop_assert!(y.abs() <= bound);
            prop_assert_eq!(fold(y, bound), y);
            // distance to the nearest odd multiple of the bound is preserved
            let lattice = |v: f64| {
                let m = ((v / bound - 1.0) / 2.0).round();
                (v - (2.0 * m + 1.0) * bound).abs()
            };
            let dist_before = lattice(x);
            let dist_after = (y - bound).abs().min((y + bound).abs());
            prop_assert!((dist_before - dist_after).abs() < 1e-9);
        }

        #[test]
        fn clipped_norm_never_exceeds_radius(
            v in proptest::collection::vec(-10.0f64..10.0, 1..40),
            radius in 1e-6f64..5.0,
        ) {
            let mut w = v.clone();
            clip_displacement(&mut w, radius);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= radius);
            let before = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if before <= radius {
                prop_assert_eq!(w, v);
            }
        }

        #[test]
        fn assign_respects_radius(
            seed in 0u64..1000,
            eta in 0.05f64..2.0,
        ) {
            let rng = SeededRng::new(seed);
            let (c, _) = sphere_packing_init(4, 3, 1.0, &rng);
            let mut r = rng.stream(Stream::Custom { tag: 1 });
            let values: Vec<f64> = (0..300).map(|_| r.random_range(-1.0..1.0)).collect();
            let pts = Dataset::new(3, values).unwrap();
            for (x, label) in pts.points().zip(assign(&pts, &c, Some(eta))) {
                if let Some(j) = label {
                    prop_assert!(sq_dist(x, c.centroid(j)).sqrt() < eta);
                }
            }
        }
    }
}
