//! `fastlloyd` command-line driver.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastlloyd::msa::{connect_tcp, run_tcp_client, serve_tcp};
use fastlloyd::{
    generate_synth, generate_timesynth, load_csv, normalize_dataset, plan, read_sweep_csv, summarize, sweep, write_csv,
    write_summary_csv, write_sweep_csv, Algo, ClientView, Dataset, Error, Experiment, NoiseSource, ProtocolParams,
    RingWidth, SweepConfig, SynthSpec, TransportOptions,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fastlloyd", version, about = "Federated differentially private k-means")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Gen(GenArgs),
    /// Execute one clustering run and write its report.
    Run(RunArgs),
    /// Run every (algorithm, epsilon, run) cell and write one CSV row each.
    Sweep(SweepArgs),
    /// Time the protocol over loopback TCP on balanced synthetic data.
    Bench(BenchArgs),
    /// Aggregate a sweep CSV into means and confidence intervals.
    Summary(SummaryArgs),
}

#[derive(Args)]
struct ParamArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    /// Seed shared by the clients.
    #[arg(long, env = "FASTLLOYD_SEED")]
    seed: Option<u64>,
    /// Fixed iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Ring width in bits (32 or 64).
    #[arg(long)]
    width: Option<u32>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<ProtocolParams, Error> {
        let mut p = match &self.config {
            Some(path) => ProtocolParams::from_config_file(path)?,
            None => ProtocolParams::default(),
        };
        for kv in &self.overrides {
            let (key, value) =
                kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            p.set(key, value)?;
        }
        if let Some(k) = self.k {
            p.k = k;
        }
        if let Some(eps) = self.eps {
            p.epsilon = eps;
        }
        if self.delta.is_some() {
            p.delta = self.delta;
        }
        if let Some(m) = self.clients {
            p.clients = m;
        }
        if let Some(seed) = self.seed {
            p.seed = seed;
        }
        if self.iterations.is_some() {
            p.iterations = self.iterations;
        }
        if let Some(w) = self.width {
            p.width = RingWidth::from_bits(w)?;
        }
        Ok(p)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Synthetic dataset, e.g. `k=2,d=2,n=10000`.
    #[arg(long, conflicts_with = "data")]
    synth: Option<String>,
    /// CSV dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// The CSV has a trailing integer label column.
    #[arg(long)]
    labels: bool,
    /// The CSV is already inside the domain; skip min-max normalization.
    #[arg(long)]
    no_normalize: bool,
}

impl DataArgs {
    /// Load the dataset and make `params` agree with its shape.
    fn load(&self, params: &mut ProtocolParams) -> Result<Dataset, Error> {
        let data = match (&self.synth, &self.data) {
            (Some(text), _) => {
                let base = SynthSpec { k: params.k, d: params.d, bound: params.bound, ..SynthSpec::default() };
                let spec = SynthSpec::parse_with(text, base)?;
                params.k = spec.k;
                params.bound = spec.bound;
                generate_synth(&spec)?.data
            }
            (None, Some(path)) => {
                let raw = load_csv(path, self.labels)?.data;
                if self.no_normalize {
                    raw
                } else {
                    normalize_dataset(&raw, params.bound)?.0
                }
            }
            (None, None) => return Err(Error::Config("one of --synth or --data is required".into())),
        };
        params.d = data.d();
        Ok(data)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Synthetic dataset description; see `run --synth`.
    #[arg(long, default_value = "")]
    synth: String,
    /// Balanced clusters without outliers (the timing dataset).
    #[arg(long, conflicts_with = "synth")]
    timesynth: bool,
    /// Append the ground-truth label column.
    #[arg(long)]
    labels: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Local,
    Server,
    Client,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "fast")]
    algo: Algo,
    #[arg(long, value_enum, default_value = "local")]
    role: Role,
    /// Shorthand for `--role local`.
    #[arg(long, conflicts_with = "role")]
    local: bool,
    /// Server bind address.
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Server address for clients.
    #[arg(long, default_value = "127.0.0.1:7878")]
    connect: String,
    /// Index of this client.
    #[arg(long, default_value_t = 0)]
    party: usize,
    /// Delay injected before every send.
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
    /// Seed of the server noise; omitted means fresh entropy.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave wall-clock data out of the report.
    #[arg(long)]
    deterministic_report: bool,
    /// Dataset size for a server run without dataset flags.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "lloyd,su,gauss,fast")]
    algos: Vec<Algo>,
    #[arg(long = "eps-grid", value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
    eps_grid: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Row CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the aggregated summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "n", value_delimiter = ',', default_value = "10000,100000")]
    ns: Vec<usize>,
    #[arg(long = "k", value_delimiter = ',', default_value = "2,5")]
    ks: Vec<usize>,
    #[arg(long = "d", value_delimiter = ',', default_value = "2,5")]
    ds: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 2)]
    clients: usize,
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
    #[arg(long, default_value = "64")]
    width: u32,
    #[arg(long, env = "FASTLLOYD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummaryArgs {
    /// Sweep CSV.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    k: usize,
    d: usize,
    clients: usize,
    iterations: usize,
    iter_ms_mean: f64,
    iter_ms_std: f64,
    bytes_per_iter: u64,
    expected_bytes_per_iter: u64,
    round_trips_per_iter: f64,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn transport(latency_ms: f64) -> Result<TransportOptions, Error> {
    if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
        return Err(Error::Config(format!("latency must be non-negative, got {latency_ms}")));
    }
    Ok(TransportOptions { latency: Duration::from_secs_f64(latency_ms / 1e3), ..TransportOptions::default() })
}

fn cmd_gen(args: &GenArgs) -> Result<(), Error> {
    let spec: SynthSpec = args.synth.parse()?;
    let synth =
        if args.timesynth { generate_timesynth(spec.n, spec.k, spec.d, spec.seed)? } else { generate_synth(&spec)? };
    let labels = args.labels.then_some(synth.labels.as_slice());
    let mut out = output(args.out.as_deref())?;
    write_csv(&mut out, &synth.data, labels)?;
    out.flush()?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let mut params = args.params.resolve()?;
    let opts = transport(args.latency_ms)?;
    let source = args.noise_seed.map_or(NoiseSource::Entropy, NoiseSource::Seeded);
    let role = if args.local { Role::Local } else { args.role };

    if role == Role::Server {
        let n = match args.n {
            Some(n) => n,
            None => args.data.load(&mut params)?.n(),
        };
        params.validate()?;
        let plan = plan(args.algo, &params, n)?;
        let listener = TcpListener::bind(&args.listen)?;
        eprintln!("listening on {} for {} clients, T = {}", listener.local_addr()?, params.clients, plan.iterations);
        let summary = serve_tcp(&listener, &plan.run, source, opts)?;
        let wire: u64 = summary.links.iter().map(|l| l.wire_bytes_sent + l.wire_bytes_received).sum();
        eprintln!("served {} rounds, {} wire bytes", summary.rounds, wire);
        return Ok(());
    }

    let data = args.data.load(&mut params)?;
    let exp = Experiment::new(args.algo, &params, &data)?;
    let report = match role {
        Role::Local => {
            let out = exp.run_local(source, opts)?;
            exp.report(&data, ClientView::from(&out), args.noise_seed, "local")
        }
        Role::Client => {
            let shard = exp
                .shards
                .get(args.party)
                .ok_or_else(|| Error::Config(format!("party {} out of range for {} clients", args.party, params.clients)))?
                .clone();
            let stream = connect_tcp(args.connect.as_str(), Duration::from_secs(10))?;
            let o = run_tcp_client(stream, args.party, &exp.plan.run, params.seed, shard, &exp.init, opts)?;
            let view = ClientView { centroids: &o.centroids, stats: o.stats, iter_ms: &o.iter_ms };
            exp.report(&data, view, args.noise_seed, "tcp")
        }
        Role::Server => unreachable!(),
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{}: T = {}, nicv = {:.6}, {} bytes/iteration",
        report.algo.name(),
        report.iterations,
        report.nicv,
        report.bytes_per_iteration
    );
    let report = if args.deterministic_report { report.deterministic() } else { report };
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "{}", report.to_json())?;
    out.flush()?;
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let mut params = args.params.resolve()?;
    let data = args.data.load(&mut params)?;
    params.validate()?;
    if args.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let cfg = SweepConfig {
        params,
        algos: args.algos.clone(),
        eps: args.eps_grid.clone(),
        runs: args.runs,
        noise_seed: args.noise_seed,
    };
    let rows = sweep(&cfg, &data)?;
    let mut out = output(args.out.as_deref())?;
    write_sweep_csv(&mut out, &rows)?;
    out.flush()?;
    if let Some(path) = &args.summary {
        write_summary_csv(File::create(path)?, &summarize(&rows))?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    let opts = transport(args.latency_ms)?;
    let mut rows = Vec::new();
    for &n in &args.ns {
        for &k in &args.ks {
            for &d in &args.ds {
                let data = generate_timesynth(n, k, d, args.seed)?.data;
                let params = ProtocolParams {
                    k,
                    d,
                    clients: args.clients,
                    seed: args.seed,
                    iterations: Some(args.iterations),
                    width: RingWidth::from_bits(args.width)?,
                    ..ProtocolParams::default()
                };
                let exp = Experiment::new(Algo::FastLloyd, &params, &data)?;
                let out = exp.run_loopback_tcp(NoiseSource::Seeded(args.seed), opts)?;
                let ms = &out.clients[0].iter_ms;
                let mean = out.iter_ms_mean();
                let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ms.len().max(2) - 1) as f64;
                let row = BenchRow {
                    n,
                    k,
                    d,
                    clients: args.clients,
                    iterations: exp.plan.iterations,
                    iter_ms_mean: mean,
                    iter_ms_std: var.sqrt(),
                    bytes_per_iter: out.payload_bytes_per_iteration,
                    expected_bytes_per_iter: exp.plan.run.payload_bytes_per_iteration(),
                    round_trips_per_iter: out.round_trips_per_iteration,
                };
                eprintln!("n={n} k={k} d={d}: {:.3} ms/iter, {} bytes/iter", row.iter_ms_mean, row.bytes_per_iter);
                rows.push(row);
            }
        }
    }
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_summary(args: &SummaryArgs) -> Result<(), Error> {
    let rows = read_sweep_csv(File::open(&args.input)?)?;
    let mut out = output(args.out.as_deref())?;
    write_summary_csv(&mut out, &summarize(&rows))?;
    out.flush()?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::Config(_) => 2,
        Error::ProtocolViolation(_) | Error::RoundTimeout { .. } | Error::Overflow { .. } => 3,
        Error::Io(_) | Error::Csv(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Summary(a) => cmd_summary(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
