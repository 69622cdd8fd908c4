use std::fs::File;

use fastlloyd::{
    generate_synth, load_csv, read_sweep_csv, sweep, write_csv, write_sweep_csv, Algo, ClientView, Experiment,
    NoiseSource, ProtocolParams, RunReport, SweepConfig, SynthSpec, TransportOptions,
};

fn synth(text: &str) -> fastlloyd::Synth {
    generate_synth(&text.parse::<SynthSpec>().unwrap()).unwrap()
}

#[test]
fn csv_round_trip_keeps_points_and_labels() {
    let s = synth("n=500,k=3,d=4,seed=2");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("points.csv");
    write_csv(File::create(&path).unwrap(), &s.data, Some(&s.labels)).unwrap();
    let back = load_csv(&path, true).unwrap();
    assert_eq!(back.data, s.data);
    assert_eq!(back.labels.as_deref(), Some(s.labels.as_slice()));
}

#[test]
fn transports_agree_under_noise() {
    let data = synth("n=4000,k=4,d=3,seed=1").data;
    let params = ProtocolParams { k: 4, d: 3, clients: 3, seed: 5, ..ProtocolParams::default() };
    for algo in Algo::ALL {
        let exp = Experiment::new(algo, &params, &data).unwrap();
        let local = exp.run_local(NoiseSource::Seeded(9), TransportOptions::default()).unwrap();
        let tcp = exp.run_loopback_tcp(NoiseSource::Seeded(9), TransportOptions::default()).unwrap();
        let central = exp.run_central(NoiseSource::Seeded(9)).unwrap();
        assert_eq!(local.centroids, tcp.centroids, "{algo}");
        assert_eq!(local.centroids, central.centroids, "{algo}");
        assert_eq!(local.payload_bytes_per_iteration, exp.plan.run.payload_bytes_per_iteration());
    }
}

#[test]
fn report_json_round_trip() {
    let data = synth("n=2000,k=2,d=2").data;
    let exp = Experiment::new(Algo::FastLloyd, &ProtocolParams::default(), &data).unwrap();
    let out = exp.run_local(NoiseSource::Seeded(3), TransportOptions::default()).unwrap();
    let report = exp.report(&data, ClientView::from(&out), Some(3), "local");
    assert_eq!(RunReport::from_json(&report.to_json()).unwrap(), report);
    let det = report.deterministic().to_json();
    assert!(!det.contains("iter_ms"));
    assert_eq!(RunReport::from_json(&det).unwrap(), report.deterministic());
}

#[test]
fn sweep_is_reproducible_and_round_trips() {
    let data = synth("n=3000,k=3,d=2,seed=4").data;
    let cfg = SweepConfig {
        params: ProtocolParams { k: 3, ..ProtocolParams::default() },
        algos: vec![Algo::FastLloyd, Algo::SuLloyd],
        eps: vec![0.5, 1.0],
        runs: 3,
        noise_seed: 8,
    };
    let a = sweep(&cfg, &data).unwrap();
    let b = sweep(&cfg, &data).unwrap();
    assert_eq!(a.len(), 12);
    assert!(a.iter().zip(&b).all(|(x, y)| x.nicv == y.nicv && x.seed == y.seed));
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &a).unwrap();
    let back = read_sweep_csv(buf.as_slice()).unwrap();
    assert_eq!(back, a);
}
