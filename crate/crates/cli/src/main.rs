//! `sampsize`: generate data, size samples, evaluate accuracy, run sweeps.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sampsize_core::harness::{self, Algorithm, Bound, SweepFactor};
use sampsize_core::{
    build_index, generate_synthetic, load_csv, pilot_estimate, relative_bound, run_with_metric,
    AnalyticalFunction, ConversionRequest, Distribution, GeneratorSpec, GridCase, GridConfig,
    MissConfig, MissStatus, Query, SweepSpec, TargetMetric,
};

#[derive(Parser)]
#[command(
    name = "sampsize",
    version,
    about = "Minimum sample sizes for approximate aggregate queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic grouped dataset as CSV.
    Generate(GenerateArgs),
    /// Find the smallest sample meeting an error bound on a CSV dataset.
    Run(RunArgs),
    /// Measure simulated confidence of the sizes found on synthetic data.
    Evaluate(EvaluateArgs),
    /// Sweep one factor and write one CSV row per run.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// normal, exponential, uniform or pareto.
    #[arg(long)]
    dist: String,
    /// Positional distribution parameters, e.g. `--params 1 1` for Normal(1, 1).
    #[arg(long, num_args = 0.., allow_negative_numbers = true)]
    params: Vec<f64>,
    /// Rows per group.
    #[arg(long)]
    rows: usize,
    #[arg(long, default_value_t = 1)]
    groups: usize,
    /// Shift of group `i` by `i * bias * |mean|`.
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "group")]
    group_col: String,
    #[arg(long)]
    out: PathBuf,
}

/// Overrides for the sizing loop; unset values keep the defaults.
#[derive(Args)]
struct MissArgs {
    /// Bootstrap resamples.
    #[arg(long = "B")]
    resamples: Option<usize>,
    #[arg(long)]
    init_lo: Option<usize>,
    #[arg(long)]
    init_hi: Option<usize>,
    /// Initialization iterations.
    #[arg(long)]
    init_len: Option<usize>,
    /// Diagnostic threshold on the summed model slopes.
    #[arg(long)]
    tau: Option<f64>,
    /// Iteration cap.
    #[arg(long)]
    kmax: Option<usize>,
    /// Pilot samples for the ordering bound and relative bounds.
    #[arg(long)]
    pilot_reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MissArgs {
    fn config(&self, groups: usize) -> MissConfig {
        let mut cfg = MissConfig::for_groups(groups).with_seed(self.seed);
        if let Some(b) = self.resamples {
            cfg.resamples = b;
        }
        if let Some(n) = self.init_lo {
            cfg.init_min = n;
        }
        if let Some(n) = self.init_hi {
            cfg.init_max = n;
        }
        if let Some(l) = self.init_len {
            cfg.init_len = l;
            cfg.max_iterations = cfg.max_iterations.max(l + 1);
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(k) = self.kmax {
            cfg.max_iterations = k;
        }
        if let Some(p) = self.pilot_reps {
            cfg.pilot_reps = p;
        }
        cfg
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    group_col: String,
    /// Measure columns read by the function, in order.
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    measure_cols: Vec<String>,
    /// e.g. avg, var, median, sum, quantile:0.9, proportion:>:2.5, count:<=:0.
    #[arg(long = "fn")]
    function: String,
    /// l2, linf, l1, l<p>, maxdiff or ordering.
    #[arg(long, default_value = "l2")]
    metric: String,
    /// Absolute error bound.
    #[arg(long, conflicts_with = "eps_rel")]
    eps: Option<f64>,
    /// Bound relative to the norm of a pilot estimate.
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[command(flatten)]
    miss: MissArgs,
    /// Write the per-iteration trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the error profile as JSON lines.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long = "fn")]
    function: String,
    /// One per group: `name[:p1,p2]`, e.g. `normal:1,1` or `uniform`.
    #[arg(long, required = true)]
    dist: Vec<String>,
    /// Relative error bound.
    #[arg(long, default_value_t = 0.01)]
    eps_rel: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    rows: usize,
    /// Sizing runs per case.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Confidence draws per run.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[command(flatten)]
    miss: MissArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// eps, delta, m or N.
    #[arg(long)]
    sweep: String,
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value = "normal:1,1")]
    dist: String,
    #[arg(long, default_value_t = 1)]
    groups: usize,
    #[arg(long, default_value_t = 1_000_000)]
    rows: usize,
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    /// Error bound relative to the true result norm; an eps sweep replaces it.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Treat bounds as absolute rather than relative.
    #[arg(long)]
    absolute: bool,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    conf_reps: usize,
    /// Any of l2miss, clt_baseline, ordering.
    #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "l2miss,clt_baseline")]
    algorithms: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    miss: MissArgs,
}

fn parse_dist(s: &str) -> Result<Distribution> {
    let (name, params) = s.split_once(':').unwrap_or((s, ""));
    let params = params
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad parameter `{p}` in `{s}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Distribution::parse(name, &params)?)
}

fn parse_algorithm(s: &str) -> Result<Algorithm> {
    Ok(match s.trim().to_ascii_lowercase().as_str() {
        "l2miss" => Algorithm::L2miss,
        "clt" | "clt_baseline" => Algorithm::CltBaseline,
        "ordering" => Algorithm::Ordering,
        other => bail!("unknown algorithm `{other}`"),
    })
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn generate(args: &GenerateArgs) -> Result<ExitCode> {
    let dist = Distribution::parse(&args.dist, &args.params)?;
    let spec = GeneratorSpec::homogeneous(dist, args.groups, args.rows, args.bias, args.seed);
    let data = generate_synthetic(&spec)?;
    data.write_csv(&args.group_col, create(&args.out)?)?;
    Ok(ExitCode::SUCCESS)
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cols: Vec<&str> = args.measure_cols.iter().map(String::as_str).collect();
    let data = load_csv(&args.data, &args.group_col, &cols)
        .with_context(|| format!("cannot load {}", args.data.display()))?;
    let index = build_index(&data);
    let query = Query::new(
        AnalyticalFunction::parse(&args.function)?,
        (0..cols.len()).collect(),
    );
    query.validate(&data)?;
    let metric = TargetMetric::parse(&args.metric)?;
    let cfg = args.miss.config(data.num_groups());
    let eps = match (args.eps, args.eps_rel) {
        (Some(e), _) => Some(e),
        (None, Some(rel)) => {
            cfg.validate(data.group_sizes())?;
            Some(relative_bound(
                rel,
                &pilot_estimate(&data, &index, &query, &cfg)?,
            )?)
        }
        (None, None) if metric == TargetMetric::Ordering => None,
        (None, None) => bail!("one of --eps or --eps-rel is required for metric {metric}"),
    };
    let outcome = run_with_metric(
        &data,
        &index,
        &query,
        &ConversionRequest::new(metric, eps),
        args.delta,
        &cfg,
    )?;
    if let Some(path) = &args.trace {
        outcome.write_trace_jsonl(create(path)?)?;
    }
    if let Some(path) = &args.profile {
        outcome.profile.write_jsonl(create(path)?)?;
    }
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &outcome)?;
    writeln!(out)?;
    Ok(ExitCode::from(match outcome.status {
        MissStatus::Satisfied => 0,
        MissStatus::UnrecoverableFailure => 2,
        MissStatus::PopulationExhausted => 3,
        MissStatus::IterationCapExceeded => 4,
    }))
}

fn evaluate(args: &EvaluateArgs) -> Result<ExitCode> {
    let dists = args
        .dist
        .iter()
        .map(|d| parse_dist(d))
        .collect::<Result<Vec<_>>>()?;
    let case = GridCase::new(
        AnalyticalFunction::parse(&args.function)?,
        dists,
        args.eps_rel,
    );
    let cfg = GridConfig {
        rows_per_group: args.rows,
        delta: args.delta,
        reps: args.runs,
        conf_reps: args.reps,
        miss: args.miss.config(case.distributions.len()),
        seed: args.miss.seed,
    };
    let report = harness::run_grid(std::slice::from_ref(&case), &cfg).remove(0);
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(if report.error.is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn bench(args: &BenchArgs) -> Result<ExitCode> {
    let bound = if args.absolute {
        Bound::Absolute(args.eps)
    } else {
        Bound::Relative(args.eps)
    };
    let spec = SweepSpec {
        factor: SweepFactor::parse(&args.sweep)?,
        values: args.values.clone(),
        distribution: parse_dist(&args.dist)?,
        groups: args.groups,
        rows_per_group: args.rows,
        bias: args.bias,
        bound,
        delta: args.delta,
        reps: args.reps,
        conf_reps: args.conf_reps,
        algorithms: args
            .algorithms
            .iter()
            .map(|a| parse_algorithm(a))
            .collect::<Result<_>>()?,
        miss: args.miss.config(args.groups),
        seed: args.miss.seed,
    };
    let rows = harness::run_sweep(&spec)?;
    harness::write_sweep_csv(&rows, create(&args.out)?)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
