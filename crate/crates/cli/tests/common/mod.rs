use fastlloyd::cluster::MIN_COUNT;
use fastlloyd::{CentroidState, Dataset};

/// Textbook Lloyd: nearest centroid, lowest index on ties, empty clusters stay.
pub fn lloyd_oracle(data: &Dataset, init: &CentroidState, iterations: usize) -> CentroidState {
    let (k, d) = (init.k, init.d);
    let mut c = init.centroids.clone();
    for _ in 0..iterations {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for x in data.points() {
            let mut best = (0, f64::INFINITY);
            for j in 0..k {
                let dist: f64 = (0..d).map(|h| (x[h] - c[j * d + h]).powi(2)).sum();
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            counts[best.0] += 1;
            for h in 0..d {
                sums[best.0 * d + h] += x[h];
            }
        }
        for j in 0..k {
            if counts[j] as f64 >= MIN_COUNT {
                for h in 0..d {
                    c[j * d + h] = sums[j * d + h] / counts[j] as f64;
                }
            }
        }
    }
    CentroidState::new(k, d, c)
}
