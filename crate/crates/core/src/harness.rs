//! Evaluation: simulated confidence, a normal-approximation baseline,
//! function-by-distribution grids and single-factor sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytics::{self, AnalyticalFunction, Query, ResultVector};
use crate::dataset::{
    build_index, generate_synthetic, true_result, Dataset, Distribution, GeneratorSpec, GroupIndex,
    GroupSpec,
};
use crate::error::{invalid, Error, Result};
use crate::estimation::{check_delta, distance, ErrorMetric};
use crate::miss::{self, ConversionRequest, MissConfig, MissStatus, TargetMetric};
use crate::sampling::{self, SizeVector};
use crate::seed;

/// Hex SHA-256 prefix of the JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `reps` independent population-scale estimates at `sizes`.
pub fn draw_results(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    sizes: &SizeVector,
    reps: usize,
    seed: u64,
) -> Result<Vec<ResultVector>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = seed::derive_seed(seed, &[seed::STREAM_CONFIDENCE, r as u64]);
            let sample = sampling::stratified_sample(dataset, index, sizes, &query.columns, s)?;
            analytics::estimate(&query.function, &sample, dataset.group_sizes())
        })
        .collect()
}

/// Fraction of draws meeting the bound, with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub c_hat: f64,
    pub std_error: f64,
    pub reps: usize,
}

impl Confidence {
    pub fn from_hits(hits: usize, reps: usize) -> Self {
        let c_hat = hits as f64 / reps as f64;
        Self {
            c_hat,
            std_error: (c_hat * (1.0 - c_hat) / reps as f64).sqrt(),
            reps,
        }
    }
}

/// Share of `reps` samples at `sizes` whose distance to `truth` is at most `eps`.
#[allow(clippy::too_many_arguments)]
pub fn simulated_confidence(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    truth: &ResultVector,
    d: ErrorMetric,
    eps: f64,
    sizes: &SizeVector,
    reps: usize,
    seed: u64,
) -> Result<Confidence> {
    if reps == 0 {
        return Err(invalid("confidence needs at least one draw"));
    }
    let draws = draw_results(dataset, index, query, sizes, reps, seed)?;
    let mut hits = 0;
    for est in &draws {
        if !est.same_layout(truth) {
            return Err(Error::LayoutMismatch {
                left: est.values().len(),
                right: truth.values().len(),
            });
        }
        if distance(d, est.values(), truth.values()) <= eps {
            hits += 1;
        }
    }
    Ok(Confidence::from_hits(hits, reps))
}

/// Share of `reps` samples whose group results sort like `truth`.
pub fn order_confidence(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    truth: &ResultVector,
    sizes: &SizeVector,
    reps: usize,
    seed: u64,
) -> Result<Confidence> {
    if reps == 0 {
        return Err(invalid("confidence needs at least one draw"));
    }
    let draws = draw_results(dataset, index, query, sizes, reps, seed)?;
    let hits = draws
        .iter()
        .filter(|est| same_order(est.values(), truth.values()))
        .count();
    Ok(Confidence::from_hits(hits, reps))
}

/// True when every pair compares the same way in `a` and `b`.
pub fn same_order(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] < a[j]) == (b[i] < b[j])))
}

/// Equal-error normal-approximation sizes for AVG:
/// `n_i = ceil((z_{1 - delta/2} sigma_i sqrt(m) / eps)^2)`, clamped to `[1, |D|_i]`.
pub fn clt_baseline_size(
    sigmas: &[f64],
    eps: f64,
    delta: f64,
    available: &[usize],
) -> Result<SizeVector> {
    if !(eps > 0.0) {
        return Err(invalid(format!("error bound must be positive, got {eps}")));
    }
    check_delta(delta)?;
    if sigmas.len() != available.len() {
        return Err(Error::LayoutMismatch {
            left: sigmas.len(),
            right: available.len(),
        });
    }
    let z = Normal::standard().inverse_cdf(1.0 - delta / 2.0);
    let m = sigmas.len() as f64;
    Ok(sigmas
        .iter()
        .zip(available)
        .map(|(&s, &cap)| {
            let n = (z * s * m.sqrt() / eps).powi(2).ceil();
            if n >= cap as f64 {
                cap
            } else {
                (n as usize).max(1)
            }
        })
        .collect::<Vec<_>>()
        .into())
}

/// Baseline sizes from full-data group standard deviations.
pub fn clt_baseline(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    eps: f64,
    delta: f64,
) -> Result<SizeVector> {
    if query.function != AnalyticalFunction::Avg {
        return Err(Error::Unsupported(format!(
            "normal baseline supports AVG only, got {}",
            query.function
        )));
    }
    let var = true_result(
        dataset,
        index,
        &Query::new(AnalyticalFunction::Var, query.columns.clone()),
    );
    let sigmas: Vec<f64> = match var {
        Ok(v) => v.values().iter().map(|x| x.sqrt()).collect(),
        // Single-row groups have no sample variance; treat them as constant.
        Err(Error::InsufficientData { .. }) => (0..dataset.num_groups())
            .map(|g| {
                let col = dataset.group_columns(index, g, &query.columns);
                analytics::evaluate_group(&AnalyticalFunction::Var, &[&col[0]], g)
                    .map_or(0.0, |v| v[0].sqrt())
            })
            .collect(),
        Err(e) => return Err(e),
    };
    clt_baseline_size(&sigmas, eps, delta, dataset.group_sizes())
}

/// One function evaluated over one or more group distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub function: AnalyticalFunction,
    pub distributions: Vec<Distribution>,
    /// Relative bound `eps*`; the absolute bound is `eps* ||theta||`.
    pub eps_rel: f64,
}

impl GridCase {
    pub fn new(
        function: AnalyticalFunction,
        distributions: Vec<Distribution>,
        eps_rel: f64,
    ) -> Self {
        Self {
            function,
            distributions,
            eps_rel,
        }
    }

    pub fn id(&self) -> String {
        let dists: Vec<String> = self.distributions.iter().map(Distribution::label).collect();
        format!("{}-{}", self.function.name(), dists.join("+"))
    }

    /// Bootstrap theory gives no guarantee: MAX-type functions, or Pareto
    /// data with infinite variance.
    pub fn bootstrap_inconsistent(&self) -> bool {
        self.function.bootstrap_inconsistent()
            || self
                .distributions
                .iter()
                .any(|d| matches!(d, Distribution::Pareto { shape } if *shape <= 2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows_per_group: usize,
    pub delta: f64,
    /// Algorithm runs `R_alg` per case.
    pub reps: usize,
    /// Confidence draws `R_conf` per run.
    pub conf_reps: usize,
    pub miss: MissConfig,
    pub seed: u64,
}

/// Per-run details behind an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub status: Option<MissStatus>,
    pub sizes: Option<SizeVector>,
    pub total_size: Option<usize>,
    pub wall_time_s: f64,
    pub confidence: Option<Confidence>,
    pub r2: Option<f64>,
    pub iterations: Option<usize>,
    pub prediction_iterations: Option<usize>,
    /// Index entries read by the final sample over its size.
    pub touched_ratio: Option<f64>,
    pub pre_guard_monotone_rate: Option<f64>,
    pub error: Option<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_dev: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self {
            mean,
            std_dev: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub case_id: String,
    pub function: String,
    pub distributions: Vec<String>,
    pub bootstrap_inconsistent: bool,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub reps: usize,
    pub conf_reps: usize,
    /// Simulated confidence over runs.
    pub confidence: Option<Summary>,
    pub r2: Option<Summary>,
    pub total_size: Option<Summary>,
    pub wall_time_s: Option<Summary>,
    pub status_counts: BTreeMap<String, usize>,
    pub runs: Vec<RunRecord>,
    pub error: Option<String>,
    pub config_hash: String,
}

fn case_dataset(case: &GridCase, rows: usize, seed: u64) -> Result<Dataset> {
    let spec = GeneratorSpec {
        groups: case
            .distributions
            .iter()
            .map(|&distribution| GroupSpec { distribution, rows })
            .collect(),
        bias: 0.0,
        seed,
    };
    generate_synthetic(&spec)
}

/// Runs [`miss::l2miss`] `cfg.reps` times per case and measures the
/// simulated confidence at each returned size.
pub fn run_grid(cases: &[GridCase], cfg: &GridConfig) -> Vec<EvalReport> {
    cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let case_seed = seed::derive_seed(cfg.seed, &[i as u64]);
            let hash = config_hash(&(case, cfg, case_seed));
            match case_dataset(case, cfg.rows_per_group, case_seed) {
                Ok(data) => evaluate_case(&data, case, cfg, case_seed, &hash),
                Err(e) => failed_report(case, cfg, &hash, e),
            }
        })
        .collect()
}

fn failed_report(case: &GridCase, cfg: &GridConfig, hash: &str, e: Error) -> EvalReport {
    EvalReport {
        error: Some(e.to_string()),
        ..empty_report(case, cfg, hash)
    }
}

fn empty_report(case: &GridCase, cfg: &GridConfig, hash: &str) -> EvalReport {
    EvalReport {
        case_id: case.id(),
        function: case.function.to_string(),
        distributions: case.distributions.iter().map(Distribution::label).collect(),
        bootstrap_inconsistent: case.bootstrap_inconsistent(),
        epsilon: None,
        delta: cfg.delta,
        reps: cfg.reps,
        conf_reps: cfg.conf_reps,
        confidence: None,
        r2: None,
        total_size: None,
        wall_time_s: None,
        status_counts: BTreeMap::new(),
        runs: Vec::new(),
        error: None,
        config_hash: hash.to_string(),
    }
}

/// Evaluates one case on an already generated dataset.
pub fn evaluate_case(
    data: &Dataset,
    case: &GridCase,
    cfg: &GridConfig,
    case_seed: u64,
    hash: &str,
) -> EvalReport {
    let index = build_index(data);
    let query = Query::new(case.function, vec![0]);
    let prep = true_result(data, &index, &query)
        .and_then(|t| miss::relative_bound(case.eps_rel, &t).map(|e| (t, e)));
    let (truth, eps) = match prep {
        Ok(v) => v,
        Err(e) => return failed_report(case, cfg, hash, e),
    };
    let runs: Vec<RunRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let run_seed = seed::derive_seed(case_seed, &[0x52554e, rep as u64]);
            evaluate_run(data, &index, &query, &truth, eps, cfg, run_seed, rep, hash)
        })
        .collect();
    let mut report = empty_report(case, cfg, hash);
    report.epsilon = Some(eps);
    summarize(&mut report, runs);
    report
}

#[allow(clippy::too_many_arguments)]
fn evaluate_run(
    data: &Dataset,
    index: &GroupIndex,
    query: &Query,
    truth: &ResultVector,
    eps: f64,
    cfg: &GridConfig,
    run_seed: u64,
    rep: usize,
    hash: &str,
) -> RunRecord {
    let mut record = RunRecord {
        rep,
        status: None,
        sizes: None,
        total_size: None,
        wall_time_s: 0.0,
        confidence: None,
        r2: None,
        iterations: None,
        prediction_iterations: None,
        touched_ratio: None,
        pre_guard_monotone_rate: None,
        error: None,
        config_hash: hash.to_string(),
    };
    let mcfg = cfg.miss.with_seed(run_seed);
    let start = Instant::now();
    let outcome = miss::l2miss(data, index, query, eps, cfg.delta, &mcfg);
    record.wall_time_s = start.elapsed().as_secs_f64();
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.status = Some(outcome.status);
    record.r2 = outcome.r2;
    record.iterations = Some(outcome.iterations);
    record.prediction_iterations = Some(outcome.prediction_iterations());
    record.pre_guard_monotone_rate = outcome.pre_guard_monotone_rate();
    record.total_size = Some(outcome.sizes.total());
    record.touched_ratio = outcome
        .sample
        .as_ref()
        .map(|s| s.touched_rows() as f64 / s.sizes().total() as f64);
    if outcome.iterations > 0 {
        let conf_seed = seed::derive_seed(run_seed, &[seed::STREAM_CONFIDENCE]);
        match simulated_confidence(
            data,
            index,
            query,
            truth,
            ErrorMetric::L2,
            eps,
            &outcome.sizes,
            cfg.conf_reps,
            conf_seed,
        ) {
            Ok(c) => record.confidence = Some(c),
            Err(e) => record.error = Some(e.to_string()),
        }
    }
    record.sizes = Some(outcome.sizes);
    record
}

fn summarize(report: &mut EvalReport, runs: Vec<RunRecord>) {
    let pick = |f: &dyn Fn(&RunRecord) -> Option<f64>| {
        Summary::of(&runs.iter().filter_map(f).collect::<Vec<_>>())
    };
    report.confidence = pick(&|r| r.confidence.map(|c| c.c_hat));
    report.r2 = pick(&|r| r.r2);
    report.total_size = pick(&|r| r.total_size.map(|t| t as f64));
    report.wall_time_s = pick(&|r| Some(r.wall_time_s));
    let mut counts = BTreeMap::new();
    for r in &runs {
        let key = r.status.map_or("error", |s| s.as_str());
        *counts.entry(key.to_string()).or_insert(0) += 1;
    }
    report.status_counts = counts;
    report.runs = runs;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFactor {
    Eps,
    Delta,
    Groups,
    Rows,
}

impl SweepFactor {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eps" | "epsilon" => Ok(SweepFactor::Eps),
            "delta" => Ok(SweepFactor::Delta),
            "m" | "groups" => Ok(SweepFactor::Groups),
            "n" | "rows" => Ok(SweepFactor::Rows),
            other => Err(invalid(format!("unknown sweep factor `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepFactor::Eps => "eps",
            SweepFactor::Delta => "delta",
            SweepFactor::Groups => "m",
            SweepFactor::Rows => "N",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    L2miss,
    CltBaseline,
    Ordering,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::L2miss => "l2miss",
            Algorithm::CltBaseline => "clt_baseline",
            Algorithm::Ordering => "ordering",
        }
    }
}

/// Error bound of a sweep: absolute, or relative to the true result norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Bound {
    Absolute(f64),
    Relative(f64),
}

impl Bound {
    fn with_value(self, v: f64) -> Self {
        match self {
            Bound::Absolute(_) => Bound::Absolute(v),
            Bound::Relative(_) => Bound::Relative(v),
        }
    }

    fn resolve(self, truth: &ResultVector) -> Result<f64> {
        match self {
            Bound::Absolute(e) if e > 0.0 => Ok(e),
            Bound::Absolute(e) => Err(invalid(format!("error bound must be positive, got {e}"))),
            Bound::Relative(r) => miss::relative_bound(r, truth),
        }
    }
}

/// AVG over `groups` groups of one distribution, one factor varied at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub factor: SweepFactor,
    pub values: Vec<f64>,
    pub distribution: Distribution,
    pub groups: usize,
    pub rows_per_group: usize,
    /// Shift between consecutive group means, relative to the mean.
    pub bias: f64,
    pub bound: Bound,
    pub delta: f64,
    pub reps: usize,
    pub conf_reps: usize,
    pub algorithms: Vec<Algorithm>,
    pub miss: MissConfig,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("sweep needs at least one value"));
        }
        if self.reps == 0 || self.conf_reps == 0 {
            return Err(invalid(
                "sweep needs at least one repetition and one confidence draw",
            ));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("sweep needs at least one algorithm"));
        }
        for &v in &self.values {
            let ok = match self.factor {
                SweepFactor::Eps => v > 0.0,
                SweepFactor::Delta => v > 0.0 && v < 1.0,
                SweepFactor::Groups | SweepFactor::Rows => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return Err(invalid(format!(
                    "invalid {} value {v}",
                    self.factor.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub factor: String,
    pub value: f64,
    pub rep: usize,
    pub algorithm: String,
    pub total_size: Option<usize>,
    pub wall_time_s: f64,
    pub c_hat: Option<f64>,
    pub c_hat_se: Option<f64>,
    pub status: String,
    pub config_hash: String,
}

/// One row per (value, repetition, algorithm), sorted by that key.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        let (groups, rows_per_group, bound, delta) = match spec.factor {
            SweepFactor::Eps => (
                spec.groups,
                spec.rows_per_group,
                spec.bound.with_value(value),
                spec.delta,
            ),
            SweepFactor::Delta => (spec.groups, spec.rows_per_group, spec.bound, value),
            SweepFactor::Groups => (value as usize, spec.rows_per_group, spec.bound, spec.delta),
            SweepFactor::Rows => (spec.groups, value as usize, spec.bound, spec.delta),
        };
        let value_seed = seed::derive_seed(spec.seed, &[vi as u64]);
        let gen = GeneratorSpec::homogeneous(
            spec.distribution,
            groups,
            rows_per_group,
            spec.bias,
            value_seed,
        );
        let data = generate_synthetic(&gen)?;
        let index = build_index(&data);
        let query = Query::new(AnalyticalFunction::Avg, vec![0]);
        let truth = true_result(&data, &index, &query)?;
        let eps = bound.resolve(&truth)?;
        let mut miss_cfg = spec.miss;
        miss_cfg.init_len = miss_cfg.init_len.max(miss::default_init_len(groups));
        miss_cfg.max_iterations = miss_cfg.max_iterations.max(miss_cfg.init_len + 1);
        let ctx = SweepContext {
            data: &data,
            index: &index,
            query: &query,
            truth: &truth,
            eps,
            delta,
            conf_reps: spec.conf_reps,
        };
        let hash = config_hash(&(spec, value, miss_cfg));
        let mut batch: Vec<SweepRow> = (0..spec.reps)
            .into_par_iter()
            .flat_map_iter(|rep| {
                let rep_seed = seed::derive_seed(value_seed, &[0x52455053, rep as u64]);
                spec.algorithms
                    .iter()
                    .map(|&alg| {
                        let mut row = ctx.run(alg, miss_cfg.with_seed(rep_seed));
                        row.factor = spec.factor.as_str().to_string();
                        row.value = value;
                        row.rep = rep;
                        row.config_hash = hash.clone();
                        row
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        rows.append(&mut batch);
    }
    Ok(rows)
}

struct SweepContext<'a> {
    data: &'a Dataset,
    index: &'a GroupIndex,
    query: &'a Query,
    truth: &'a ResultVector,
    eps: f64,
    delta: f64,
    conf_reps: usize,
}

impl SweepContext<'_> {
    fn run(&self, alg: Algorithm, cfg: MissConfig) -> SweepRow {
        let mut row = SweepRow {
            factor: String::new(),
            value: 0.0,
            rep: 0,
            algorithm: alg.as_str().to_string(),
            total_size: None,
            wall_time_s: 0.0,
            c_hat: None,
            c_hat_se: None,
            status: String::new(),
            config_hash: String::new(),
        };
        let conf_seed = seed::derive_seed(cfg.seed, &[seed::STREAM_CONFIDENCE]);
        let start = Instant::now();
        let result = match alg {
            Algorithm::L2miss => miss::l2miss(
                self.data, self.index, self.query, self.eps, self.delta, &cfg,
            )
            .map(|o| (o.sizes, o.status.as_str().to_string())),
            Algorithm::CltBaseline => {
                clt_baseline(self.data, self.index, self.query, self.eps, self.delta)
                    .map(|s| (s, "baseline".to_string()))
            }
            Algorithm::Ordering => miss::run_with_metric(
                self.data,
                self.index,
                self.query,
                &ConversionRequest::new(TargetMetric::Ordering, None),
                self.delta,
                &cfg,
            )
            .map(|o| (o.sizes, o.status.as_str().to_string())),
        };
        row.wall_time_s = start.elapsed().as_secs_f64();
        let (sizes, status) = match result {
            Ok(v) => v,
            Err(e) => {
                row.status = format!("error: {e}");
                return row;
            }
        };
        row.total_size = Some(sizes.total());
        row.status = status;
        if sizes.iter().all(|&n| n > 0) {
            let conf = match alg {
                Algorithm::Ordering => order_confidence(
                    self.data,
                    self.index,
                    self.query,
                    self.truth,
                    &sizes,
                    self.conf_reps,
                    conf_seed,
                ),
                _ => simulated_confidence(
                    self.data,
                    self.index,
                    self.query,
                    self.truth,
                    ErrorMetric::L2,
                    self.eps,
                    &sizes,
                    self.conf_reps,
                    conf_seed,
                ),
            };
            if let Ok(c) = conf {
                row.c_hat = Some(c.c_hat);
                row.c_hat_se = Some(c.std_error);
            }
        }
        row
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
