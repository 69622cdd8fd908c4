//! Federated differentially private k-means.
//!
//! Clients hold disjoint shards of a dataset normalized to `[-B, B]^d`. Each
//! iteration they assign points to centroids within a radius, compute
//! per-cluster sums relative to the previous centroids, and one-time-pad them
//! with masks derived from a shared seed. A server adds the masked words and
//! calibrated Gaussian noise, and broadcasts the result; clients remove the
//! masks and update their centroids.
//!
//! ```no_run
//! use fastlloyd::{generate_synth, Algo, Experiment, NoiseSource, ProtocolParams, SynthSpec};
//!
//! let data = generate_synth(&"k=2,d=2,n=10000".parse::<SynthSpec>()?)?.data;
//! let params = ProtocolParams::default();
//! let exp = Experiment::new(Algo::FastLloyd, &params, &data)?;
//! let out = exp.run_central(NoiseSource::Entropy)?;
//! println!("nicv = {}", fastlloyd::nicv(&data, &out.centroids));
//! # Ok::<(), fastlloyd::Error>(())
//! ```

pub mod baselines;
pub mod cluster;
pub mod dataset;
pub mod dpcalib;
pub mod error;
pub mod eval;
pub mod msa;
pub mod params;
pub mod ringcodec;
pub mod rng;
pub mod synth;

pub use baselines::{initial_centroids, plan, Algo, AlgoPlan, Calibration};
pub use cluster::{
    assign, compute_radius, fold, local_update, reconstruct_centroids, sphere_packing_init, CentroidState,
    GlobalUpdate, LocalUpdate, RadiusSchedule, UpdateRule,
};
pub use dataset::{load_csv, normalize_dataset, partition_dataset, read_csv, write_csv, AffineMap, Dataset, Labeled};
pub use dpcalib::{calibrate_sigma, default_delta, gdp_delta, split_sigma, NoisePlan};
pub use error::{Error, Result};
pub use eval::{
    auc, nicv, read_sweep_csv, summarize, sweep, write_summary_csv, write_sweep_csv, ClientView, Experiment,
    RunReport, SummaryRow, SweepConfig, SweepRow,
};
pub use msa::{NoiseSource, RunOutcome, RunPlan, TransportOptions};
pub use params::{ProtocolParams, RadiusPolicy, RingWidth};
pub use ringcodec::{FixedPoint, RingMatrix};
pub use rng::{SeededRng, Stream};
pub use synth::{generate_synth, generate_timesynth, SizeRatio, Synth, SynthSpec};
