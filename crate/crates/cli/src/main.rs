//! `kme`: seeded experiments for the k-means entropy reward.
//!
//! Every command echoes its effective configuration. CSV output starts with a
//! `# config-json {...}` line followed by the column header; JSON output is an
//! object with `config` and `results` fields.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kme::experiments::{
    bench, bound_check, density_check, entropy_sample, entropy_walk, DensityCheck, EngineParams,
    EntropyCurve,
};
use kme::explore::write_learning_csv;
use kme::synth::{sample_suite, walk_suite, write_points_csv, WALK_SIGMAS};
use kme::{sample, train, train_without_engine, DistributionSpec, ExploreConfig, FChoice, InitPolicy, SparseBoxEnv};
use serde::Serialize;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "kme", version, about = "k-means maximum entropy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
enum Command {
    /// Stream samples from each distribution through a fresh engine.
    EntropySample(SampleArgs),
    /// Stream Gaussian random walks through a fresh engine per (d, sigma).
    EntropyWalk(WalkArgs),
    /// Compare the cell-measure density estimate against the true pdf.
    DensityCheck(DensityArgs),
    /// Compare the entropy bound with the closed-form entropy over seeds.
    BoundCheck(BoundArgs),
    /// Train a CEM policy on the sparse-reward box with the intrinsic reward.
    Explore(ExploreArgs),
    /// Time commits across k at fixed d.
    Bench(BenchArgs),
    /// Write raw samples from one distribution.
    Sample(RawSampleArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum FArg {
    Log,
    Sqrt,
}

impl From<FArg> for FChoice {
    fn from(f: FArg) -> Self {
        match f {
            FArg::Log => FChoice::Log,
            FArg::Sqrt => FChoice::Sqrt,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum InitArg {
    Zero,
    FirstPoints,
}

impl From<InitArg> for InitPolicy {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Zero => InitPolicy::Zero,
            InitArg::FirstPoints => InitPolicy::FirstPoints,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EngineArgs {
    #[arg(long, default_value_t = 300)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = FArg::Sqrt)]
    f: FArg,
    /// Centre initialisation.
    #[arg(long, value_enum, default_value_t = InitArg::FirstPoints)]
    init: InitArg,
}

impl EngineArgs {
    fn params(&self) -> EngineParams {
        EngineParams {
            k: self.k,
            alpha: self.alpha,
            kappa: self.kappa,
            f: self.f.into(),
            init: self.init.into(),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct OutputArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Points per distribution.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Distributions (see `sample --help`); the six-distribution suite when omitted.
    #[arg(long, value_delimiter = ',')]
    dists: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    record_every: usize,
}

#[derive(Args, Debug, Serialize)]
struct WalkArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Steps per walk.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 64])]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = WALK_SIGMAS)]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    record_every: usize,
}

#[derive(Args, Debug, Serialize)]
struct DensityArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Training points.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Cluster counts to fit; replaces --k.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000])]
    ks: Vec<usize>,
    /// Monte-Carlo samples for the cell measures.
    #[arg(long, default_value_t = 1_000_000)]
    mc: usize,
    #[arg(long, default_value = "uniform")]
    dist: String,
}

#[derive(Args, Debug, Serialize)]
struct BoundArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, default_value_t = 50_000)]
    n: usize,
    #[arg(long, default_value = "uniform")]
    dist: String,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    runs: u64,
}

#[derive(Args, Debug, Serialize)]
struct ExploreArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// JSON file with ExploreConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, value_enum)]
    f: Option<FArg>,
    #[arg(long)]
    beta: Option<f64>,
    /// Environment steps per batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Number of batches.
    #[arg(long)]
    batches: Option<usize>,
    /// Box dimension.
    #[arg(long, default_value_t = 2)]
    dims: usize,
    /// Run with no reward engine attached.
    #[arg(long)]
    no_engine: bool,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Timed commits per k.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 5_000)]
    warmup: usize,
    /// Cluster counts to time; replaces --k.
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 300, 1000])]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [64])]
    dims: Vec<usize>,
    /// Workload: a random walk with this step size, or `uniform` for the unit cube.
    #[arg(long, default_value = "0.1")]
    workload: String,
}

/// Distribution names: `uniform`, `mix4`, `mix2`, `gauss:<variance>`,
/// `walk:<d>:<sigma>:<steps>`, or `@file.json` holding a distribution spec.
#[derive(Args, Debug, Serialize)]
struct RawSampleArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value = "uniform")]
    dist: String,
}

fn parse_dist(name: &str) -> Result<DistributionSpec> {
    let suite = sample_suite();
    let num = |s: &str| -> Result<f64> { s.parse().with_context(|| format!("bad number {s:?} in {name:?}")) };
    let spec = match name {
        "uniform" => suite[0].clone(),
        "mix4" => suite[1].clone(),
        "mix2" => suite[2].clone(),
        _ => {
            if let Some(path) = name.strip_prefix('@') {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?
            } else if let Some(v) = name.strip_prefix("gauss:") {
                DistributionSpec::gaussian(vec![0.5, 0.5], num(v)?)
            } else if let Some(rest) = name.strip_prefix("walk:") {
                let parts: Vec<&str> = rest.split(':').collect();
                let [d, sigma, steps] = parts[..] else {
                    bail!("walk needs walk:<d>:<sigma>:<steps>, got {name:?}");
                };
                DistributionSpec::random_walk(
                    num(sigma)?,
                    d.parse().with_context(|| format!("bad dimension in {name:?}"))?,
                    steps.parse().with_context(|| format!("bad step count in {name:?}"))?,
                )
            } else {
                bail!("unknown distribution {name:?} (try uniform, mix4, mix2, gauss:<variance>, walk:<d>:<sigma>:<steps>, @file.json)");
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Output target that writes the config comment, then the body.
struct Sink {
    out: Box<dyn Write>,
    format: Format,
    config: serde_json::Value,
}

impl Sink {
    fn open(output: &OutputArgs, default: Format, config: serde_json::Value) -> Result<Self> {
        let out: Box<dyn Write> = match &output.out {
            Some(path) => Box::new(BufWriter::new(create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        Ok(Self {
            out,
            format: output.format.unwrap_or(default),
            config,
        })
    }

    fn csv(mut self, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        writeln!(self.out, "# config-json {}", self.config)?;
        writeln!(self.out, "{header}")?;
        for r in rows {
            writeln!(self.out, "{r}")?;
        }
        self.out.flush()?;
        Ok(())
    }

    fn json(mut self, results: impl Serialize) -> Result<()> {
        let doc = json!({ "config": self.config, "results": results });
        serde_json::to_writer_pretty(&mut self.out, &doc)?;
        writeln!(self.out)?;
        self.out.flush()?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cannot write {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_curves(sink: Sink, curves: &[EntropyCurve]) -> Result<()> {
    match sink.format {
        Format::Csv => sink.csv(
            "label,d,step,sqrt_objective,log_objective,bound,true_entropy",
            curves.iter().flat_map(|c| {
                c.points.iter().map(move |p| {
                    format!(
                        "{},{},{},{},{},{},{}",
                        c.label,
                        c.d,
                        p.step,
                        p.sqrt_objective,
                        p.log_objective,
                        p.bound,
                        opt(c.true_entropy)
                    )
                })
            }),
        ),
        Format::Json => sink.json(
            curves
                .iter()
                .map(|c| json!({ "final_estimate": c.final_estimate(), "curve": c }))
                .collect::<Vec<_>>(),
        ),
    }
}

fn run(cmd: &Command) -> Result<()> {
    let config = serde_json::to_value(cmd)?;
    match cmd {
        Command::EntropySample(a) => {
            let specs = if a.dists.is_empty() {
                sample_suite()
            } else {
                a.dists.iter().map(|d| parse_dist(d)).collect::<Result<_>>()?
            };
            let sink = Sink::open(&a.output, Format::Csv, config)?;
            let curves = entropy_sample(&a.engine.params(), &specs, a.n, a.output.seed, a.record_every)?;
            write_curves(sink, &curves)
        }
        Command::EntropyWalk(a) => {
            if a.dims.is_empty() || a.sigmas.is_empty() {
                bail!("--dims and --sigmas must be nonempty");
            }
            let walks = walk_suite(&a.dims, &a.sigmas, a.n);
            let sink = Sink::open(&a.output, Format::Csv, config)?;
            let curves = entropy_walk(&a.engine.params(), &walks, a.output.seed, a.record_every)?;
            write_curves(sink, &curves)
        }
        Command::DensityCheck(a) => {
            let spec = parse_dist(&a.dist)?;
            let check = DensityCheck {
                ks: a.ks.clone(),
                n_train: a.n,
                mc_samples: a.mc,
                ..DensityCheck::default()
            };
            let sink = Sink::open(&a.output, Format::Json, config)?;
            let rows = density_check(&a.engine.params(), &spec, &check, a.output.seed)?;
            match sink.format {
                Format::Csv => sink.csv(
                    "k,median_rel_error,q25_rel_error,q75_rel_error,max_rel_error,empty_cells",
                    rows.iter().map(|r| {
                        format!(
                            "{},{},{},{},{},{}",
                            r.k, r.median_rel_error, r.q25_rel_error, r.q75_rel_error, r.max_rel_error, r.empty_cells
                        )
                    }),
                ),
                Format::Json => sink.json(&rows),
            }
        }
        Command::BoundCheck(a) => {
            let spec = parse_dist(&a.dist)?;
            let seeds: Vec<u64> = (0..a.runs).map(|i| a.output.seed.wrapping_add(i)).collect();
            let sink = Sink::open(&a.output, Format::Json, config)?;
            let rows = bound_check(&a.engine.params(), &spec, a.n, &seeds)?;
            match sink.format {
                Format::Csv => sink.csv(
                    "seed,bound,true_entropy,gap",
                    rows.iter().map(|r| format!("{},{},{},{}", r.seed, r.bound, r.true_entropy, r.gap)),
                ),
                Format::Json => sink.json(&rows),
            }
        }
        Command::Explore(a) => explore(a),
        Command::Bench(a) => {
            let workload = |d: usize| -> Result<DistributionSpec> {
                if a.workload == "uniform" {
                    return Ok(DistributionSpec::UniformBox {
                        lower: vec![0.0; d],
                        upper: vec![1.0; d],
                    });
                }
                let sigma: f64 = a
                    .workload
                    .parse()
                    .with_context(|| format!("--workload must be `uniform` or a step size, got {:?}", a.workload))?;
                Ok(DistributionSpec::random_walk(sigma, d, a.warmup + a.n))
            };
            let reports = a
                .dims
                .iter()
                .map(|&d| bench(&a.engine.params(), &workload(d)?, &a.ks, a.warmup, a.n, a.output.seed).map_err(Into::into))
                .collect::<Result<Vec<_>>>()?;
            let sink = Sink::open(&a.output, Format::Json, config)?;
            match sink.format {
                Format::Csv => sink.csv(
                    "k,d,commits,mean_commit_secs,commits_per_sec,pathological_fraction,fitted_exponent",
                    reports.iter().flat_map(|rep| {
                        rep.rows.iter().map(move |r| {
                            format!(
                                "{},{},{},{},{},{},{}",
                                r.k,
                                r.d,
                                r.commits,
                                r.mean_commit_secs,
                                r.commits_per_sec,
                                opt(r.pathological_fraction),
                                opt(rep.fitted_exponent)
                            )
                        })
                    }),
                ),
                Format::Json => sink.json(&reports),
            }
        }
        Command::Sample(a) => {
            let spec = parse_dist(&a.dist)?;
            let points = sample(&spec, a.n, a.output.seed)?;
            let mut sink = Sink::open(&a.output, Format::Csv, config)?;
            match sink.format {
                Format::Csv => {
                    writeln!(sink.out, "# config-json {}", sink.config)?;
                    write_points_csv(&mut sink.out, &points)?;
                    sink.out.flush()?;
                    Ok(())
                }
                Format::Json => sink.json(&points),
            }
        }
    }
}

fn explore(a: &ExploreArgs) -> Result<()> {
    let mut cfg: ExploreConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExploreConfig::default(),
    };
    cfg.seed = a.output.seed;
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.f {
        cfg.f = v.into();
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.batches {
        cfg.t_max = v;
    }
    cfg.validate()?;
    let env = SparseBoxEnv::corner(a.dims)?;
    let config = json!({ "command": "explore", "dims": a.dims, "no_engine": a.no_engine, "explore": cfg });
    let mut sink = Sink::open(&a.output, Format::Csv, config)?;
    let report = if a.no_engine {
        train_without_engine(&cfg, &env)?
    } else {
        train(&cfg, &env)?
    };
    match sink.format {
        Format::Csv => {
            writeln!(sink.out, "# config-json {}", sink.config)?;
            write_learning_csv(&mut sink.out, &report.records)?;
            sink.out.flush()?;
            Ok(())
        }
        Format::Json => sink.json(json!({
            "records": report.records,
            "final_coverage": report.final_coverage(),
            "first_success": report.first_success(),
            "pathological_fraction": report.engine.as_ref().and_then(|e| e.pathological_fraction().ok()),
        })),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
