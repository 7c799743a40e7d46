//! The sample-estimate-predict loop and its metric extensions.
//!
//! [`l2miss`] searches for a near-minimal size vector whose bootstrap L2
//! error meets the bound. [`run_with_metric`] converts a bound on another
//! metric, or an ordering requirement, into an equivalent L2 bound first.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, AnalyticalFunction, Query, ResultVector};
use crate::dataset::{Dataset, GroupIndex};
use crate::error::{invalid, Error, Result};
use crate::estimation::{self, check_delta, BootstrapConfig, ErrorMetric, DEFAULT_RESAMPLES};
use crate::model::{
    self, Diagnosis, DiagnosticConfig, ErrorProfile, ErrorRecord, ModelParams, DEFAULT_TAU,
};
use crate::sampling::{self, Sample, SizeVector};
use crate::seed;

pub const DEFAULT_INIT_RANGE: (usize, usize) = (4000, 8000);
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_PILOT_REPS: usize = 5;
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissConfig {
    /// Bootstrap resamples `B`.
    pub resamples: usize,
    /// Initialization interval `[n_min, n_max]`.
    pub init_min: usize,
    pub init_max: usize,
    /// Number of initialization iterations `l`.
    pub init_len: usize,
    /// Diagnostic threshold on the total model slope.
    pub tau: f64,
    /// Iteration cap, initialization included.
    pub max_iterations: usize,
    /// Pilot samples averaged for the ordering bound.
    pub pilot_reps: usize,
    pub seed: u64,
}

/// `max(20, 5(m + 1))`.
pub fn default_init_len(groups: usize) -> usize {
    20.max(5 * (groups + 1))
}

impl MissConfig {
    /// Defaults for `groups` groups.
    pub fn for_groups(groups: usize) -> Self {
        let init_len = default_init_len(groups);
        Self {
            resamples: DEFAULT_RESAMPLES,
            init_min: DEFAULT_INIT_RANGE.0,
            init_max: DEFAULT_INIT_RANGE.1,
            init_len,
            tau: DEFAULT_TAU,
            max_iterations: DEFAULT_MAX_ITERATIONS.max(init_len + 1),
            pilot_reps: DEFAULT_PILOT_REPS,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, group_sizes: &[usize]) -> Result<()> {
        let m = group_sizes.len();
        let smallest = group_sizes.iter().copied().min().unwrap_or(0);
        if self.init_min == 0 || self.init_min > self.init_max {
            return Err(invalid(format!(
                "initialization interval [{}, {}] is empty or starts at 0",
                self.init_min, self.init_max
            )));
        }
        if self.init_max > smallest {
            return Err(invalid(format!(
                "initialization maximum {} exceeds the smallest group ({smallest} rows)",
                self.init_max
            )));
        }
        if self.init_len < m + 2 {
            return Err(invalid(format!(
                "initialization length {} is below m + 2 = {}",
                self.init_len,
                m + 2
            )));
        }
        if self.max_iterations <= self.init_len {
            return Err(invalid(format!(
                "iteration cap {} must exceed the initialization length {}",
                self.max_iterations, self.init_len
            )));
        }
        if self.pilot_reps == 0 {
            return Err(invalid("pilot_reps must be at least 1"));
        }
        BootstrapConfig::new(self.resamples, self.seed)?;
        DiagnosticConfig::new(self.tau)?;
        Ok(())
    }
}

/// Draws `len` initialization size vectors.
///
/// Each coordinate is `n_min` with probability `n_max / (n_min + n_max)`,
/// else `n_max`, so that the expected error matches the harmonic mean size.
pub fn initialize_sizes(
    n_min: usize,
    n_max: usize,
    len: usize,
    groups: usize,
    seed: u64,
) -> Vec<SizeVector> {
    let p_min = n_max as f64 / (n_min + n_max) as f64;
    let mut rng = seed::rng(seed, &[seed::STREAM_INIT]);
    (0..len)
        .map(|_| {
            (0..groups)
                .map(|_| if rng.random_bool(p_min) { n_min } else { n_max })
                .collect::<Vec<_>>()
                .into()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissStatus {
    Satisfied,
    UnrecoverableFailure,
    IterationCapExceeded,
    PopulationExhausted,
}

impl MissStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MissStatus::Satisfied => "satisfied",
            MissStatus::UnrecoverableFailure => "unrecoverable_failure",
            MissStatus::IterationCapExceeded => "iteration_cap_exceeded",
            MissStatus::PopulationExhausted => "population_exhausted",
        }
    }
}

impl fmt::Display for MissStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Predict,
}

/// One loop iteration as written to the trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    /// Sizes sampled at this iteration; absent when the loop stopped before sampling.
    pub sizes: Option<SizeVector>,
    pub error: Option<f64>,
    /// Fitted model before the diagnostic.
    pub beta: Option<ModelParams>,
    pub r2: Option<f64>,
    pub diagnosis: Option<String>,
    /// Whether the raw prediction already exceeded the previous predicted
    /// sizes in every group, before the growth guard.
    pub pre_guard_monotone: Option<bool>,
    pub status: Option<MissStatus>,
}

impl TraceEntry {
    fn new(iteration: usize, phase: Phase) -> Self {
        Self {
            iteration,
            phase,
            sizes: None,
            error: None,
            beta: None,
            r2: None,
            diagnosis: None,
            pre_guard_monotone: None,
            status: None,
        }
    }
}

/// Bound conversion applied before the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricContext {
    pub metric: TargetMetric,
    pub user_epsilon: Option<f64>,
    pub internal_epsilon: f64,
    pub pilot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissOutcome {
    pub status: MissStatus,
    /// L2 bound on the query result.
    pub epsilon: f64,
    pub delta: f64,
    pub sizes: SizeVector,
    /// Estimated error at `sizes`.
    pub error: Option<f64>,
    /// Query result on the final sample, rescaled for SUM and COUNT.
    pub estimate: Option<ResultVector>,
    /// Iterations executed (samples drawn).
    pub iterations: usize,
    pub init_len: usize,
    pub profile: ErrorProfile,
    pub trace: Vec<TraceEntry>,
    /// Fit over the full profile at termination.
    pub beta: Option<ModelParams>,
    pub r2: Option<f64>,
    pub metric: Option<MetricContext>,
    #[serde(skip)]
    pub sample: Option<Sample>,
}

impl MissOutcome {
    /// Iterations past initialization.
    pub fn prediction_iterations(&self) -> usize {
        self.iterations.saturating_sub(self.init_len)
    }

    /// Fraction of guarded prediction steps whose raw prediction was already
    /// monotone; `None` when no guarded step ran.
    pub fn pre_guard_monotone_rate(&self) -> Option<f64> {
        let flags: Vec<bool> = self
            .trace
            .iter()
            .filter_map(|t| t.pre_guard_monotone)
            .collect();
        (!flags.is_empty())
            .then(|| flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
    }

    pub fn write_trace_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for entry in &self.trace {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the loop for `query` under an absolute L2 bound `eps`.
///
/// SUM and COUNT are optimized as AVG and PROPORTION with the bound divided
/// by the largest group size; the returned estimate is rescaled.
pub fn l2miss(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    eps: f64,
    delta: f64,
    cfg: &MissConfig,
) -> Result<MissOutcome> {
    if !(eps > 0.0) {
        return Err(invalid(format!("error bound must be positive, got {eps}")));
    }
    check_delta(delta)?;
    query.validate(dataset)?;
    cfg.validate(dataset.group_sizes())?;

    let (function, scale) = match query.function {
        AnalyticalFunction::Sum | AnalyticalFunction::Count { .. } => {
            let (f, s) = analytics::transform_inconsistent(&query.function, dataset.group_sizes())?;
            (f, Some(s))
        }
        f => (f, None),
    };
    let inner_eps = match &scale {
        Some(s) => eps / s.iter().fold(0.0f64, |m, v| m.max(*v)),
        None => eps,
    };
    let inner = Query::new(function, query.columns.clone());
    let mut outcome = run_loop(dataset, index, &inner, inner_eps, delta, cfg)?;
    outcome.epsilon = eps;
    if let Some(sample) = &outcome.sample {
        outcome.estimate = Some(analytics::estimate(
            &query.function,
            sample,
            dataset.group_sizes(),
        )?);
    }
    Ok(outcome)
}

fn run_loop(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    eps: f64,
    delta: f64,
    cfg: &MissConfig,
) -> Result<MissOutcome> {
    let m = dataset.num_groups();
    let available = dataset.group_sizes();
    let diag_cfg = DiagnosticConfig::new(cfg.tau)?;
    let init = initialize_sizes(cfg.init_min, cfg.init_max, cfg.init_len, m, cfg.seed);

    let mut profile = ErrorProfile::new(m);
    let mut trace = Vec::new();
    let mut last: Option<(SizeVector, f64, Sample)> = None;
    let mut previous_predicted: Option<SizeVector> = None;
    let mut status = MissStatus::IterationCapExceeded;

    for k in 1..=cfg.max_iterations {
        let mut entry;
        let sizes = if k <= cfg.init_len {
            entry = TraceEntry::new(k, Phase::Init);
            init[k - 1].clone()
        } else {
            entry = TraceEntry::new(k, Phase::Predict);
            let fitted = match model::fit_wls(&profile) {
                Ok(b) => b,
                Err(Error::DegenerateProfile | Error::Underdetermined { .. }) => {
                    entry.diagnosis = Some("degenerate_profile".into());
                    entry.status = Some(MissStatus::UnrecoverableFailure);
                    trace.push(entry);
                    status = MissStatus::UnrecoverableFailure;
                    break;
                }
                Err(e) => return Err(e),
            };
            entry.r2 = model::r2_score(&profile, &fitted).ok();
            entry.beta = Some(fitted.clone());
            let diagnosis = model::diagnose(&fitted, &diag_cfg);
            entry.diagnosis = Some(
                match diagnosis {
                    Diagnosis::Accepted(_) => "accepted",
                    Diagnosis::Adjusted(_) => "adjusted",
                    Diagnosis::Unrecoverable => "unrecoverable",
                }
                .into(),
            );
            let Some(params) = diagnosis.params() else {
                entry.status = Some(MissStatus::UnrecoverableFailure);
                trace.push(entry);
                status = MissStatus::UnrecoverableFailure;
                break;
            };
            let mut predicted = model::predict_sizes(params, eps, available)?.into_inner();
            // The guard compares against the previous prediction only; the
            // last initialization vector is a random design point, not a
            // size the model chose.
            if let Some(prev) = &previous_predicted {
                entry.pre_guard_monotone =
                    Some(predicted.iter().zip(prev.iter()).all(|(n, p)| n > p));
                for ((n, &p), &cap) in predicted.iter_mut().zip(prev.iter()).zip(available) {
                    *n = (*n).max(p + 1).min(cap);
                }
            }
            let predicted = SizeVector::new(predicted);
            previous_predicted = Some(predicted.clone());
            predicted
        };

        let sample_seed = seed::derive_seed(cfg.seed, &[seed::STREAM_SAMPLE, k as u64]);
        let sample =
            sampling::stratified_sample(dataset, index, &sizes, &query.columns, sample_seed)?;
        let boot = BootstrapConfig::new(
            cfg.resamples,
            seed::derive_seed(cfg.seed, &[seed::STREAM_BOOTSTRAP, k as u64]),
        )?;
        let e =
            estimation::bootstrap_error(&sample, &query.function, ErrorMetric::L2, delta, &boot)?;
        profile.push(ErrorRecord {
            sizes: sizes.clone(),
            error: e,
        })?;
        entry.sizes = Some(sizes.clone());
        entry.error = Some(e);
        let exhausted = sizes.iter().zip(available).all(|(n, cap)| n >= cap);
        last = Some((sizes, e, sample));

        if e <= eps {
            entry.status = Some(MissStatus::Satisfied);
            trace.push(entry);
            status = MissStatus::Satisfied;
            break;
        }
        if exhausted {
            entry.status = Some(MissStatus::PopulationExhausted);
            trace.push(entry);
            status = MissStatus::PopulationExhausted;
            break;
        }
        if k == cfg.max_iterations {
            entry.status = Some(MissStatus::IterationCapExceeded);
        }
        trace.push(entry);
    }

    let iterations = profile.len();
    let beta = model::fit_wls(&profile).ok();
    let r2 = beta
        .as_ref()
        .and_then(|b| model::r2_score(&profile, b).ok());
    let (sizes, error, estimate, sample) = match last {
        Some((sizes, e, sample)) => {
            let est = analytics::evaluate(&query.function, &sample)?;
            (sizes, Some(e), Some(est), Some(sample))
        }
        None => (SizeVector::new(vec![0; m]), None, None, None),
    };
    Ok(MissOutcome {
        status,
        epsilon: eps,
        delta,
        sizes,
        error,
        estimate,
        iterations,
        init_len: cfg.init_len,
        profile,
        trace,
        beta,
        r2,
        metric: None,
        sample,
    })
}

/// Metric the caller wants bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetMetric {
    L2,
    Linf,
    L1,
    Lp {
        p: f64,
    },
    MaxDifference,
    /// Preserve the sort order of the group results.
    Ordering,
}

impl TargetMetric {
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "l2" => TargetMetric::L2,
            "linf" | "max" => TargetMetric::Linf,
            "l1" => TargetMetric::L1,
            "maxdiff" | "max_difference" | "maxdifference" => TargetMetric::MaxDifference,
            "ordering" | "order" => TargetMetric::Ordering,
            other => match other.strip_prefix('l').and_then(|p| p.parse::<f64>().ok()) {
                Some(p) => TargetMetric::Lp { p },
                None => return Err(invalid(format!("unknown metric `{s}`"))),
            },
        })
    }

    /// The distance this target is measured with, if it is a distance.
    pub fn error_metric(&self) -> Option<ErrorMetric> {
        match *self {
            TargetMetric::L2 => Some(ErrorMetric::L2),
            TargetMetric::Linf => Some(ErrorMetric::Linf),
            TargetMetric::L1 => Some(ErrorMetric::L1),
            TargetMetric::Lp { p } => Some(ErrorMetric::Lp { p }),
            TargetMetric::MaxDifference => Some(ErrorMetric::MaxDifference),
            TargetMetric::Ordering => None,
        }
    }
}

impl fmt::Display for TargetMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetMetric::Ordering => f.write_str("Ordering"),
            other => write!(f, "{}", other.error_metric().expect("distance metric")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionRequest {
    pub metric: TargetMetric,
    /// User bound; unused for ordering.
    pub epsilon: Option<f64>,
}

impl ConversionRequest {
    pub fn new(metric: TargetMetric, epsilon: Option<f64>) -> Self {
        Self { metric, epsilon }
    }
}

/// Equivalent L2 bound `eps'` such that `d_L2 <= eps'` implies the request.
///
/// `entries` is the length of the result vector. For `1 <= p < 2`,
/// `||x||_p <= entries^(1/p - 1/2) ||x||_2` gives the divisor.
pub fn convert_bound(
    req: &ConversionRequest,
    entries: usize,
    pilot: Option<&ResultVector>,
) -> Result<f64> {
    let eps = || match req.epsilon {
        Some(e) if e > 0.0 => Ok(e),
        Some(e) => Err(invalid(format!("error bound must be positive, got {e}"))),
        None => Err(invalid(format!("{} requires an error bound", req.metric))),
    };
    match req.metric {
        TargetMetric::L2 | TargetMetric::Linf => eps(),
        TargetMetric::Lp { p } if !(p >= 1.0) => {
            Err(invalid(format!("Lp requires p >= 1, got {p}")))
        }
        TargetMetric::Lp { p } if p >= 2.0 => eps(),
        TargetMetric::Lp { p } => Ok(eps()? / (entries as f64).powf(1.0 / p - 0.5)),
        TargetMetric::L1 => Ok(eps()? / (entries as f64).sqrt()),
        TargetMetric::MaxDifference => Ok(eps()? / std::f64::consts::SQRT_2),
        TargetMetric::Ordering => order_bound(pilot.ok_or(Error::MissingPilot)?),
    }
}

/// Smallest gap between adjacent sorted group results, divided by `sqrt 2`.
///
/// An L2 error below this keeps the estimate inside the same ordering cone.
pub fn order_bound(theta: &ResultVector) -> Result<f64> {
    if theta.block_len() != 1 {
        return Err(Error::Unsupported(
            "ordering needs one scalar per group".into(),
        ));
    }
    if theta.num_groups() < 2 {
        return Err(invalid("ordering needs at least two groups"));
    }
    let mut sorted = theta.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !(gap > 0.0) {
        return Err(Error::IndistinguishableGroups);
    }
    Ok(gap / std::f64::consts::SQRT_2)
}

/// Entrywise mean of `cfg.pilot_reps` results at `min(n_max, |D|_i)` rows per group.
pub fn pilot_estimate(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    cfg: &MissConfig,
) -> Result<ResultVector> {
    if cfg.pilot_reps == 0 {
        return Err(invalid("pilot_reps must be at least 1"));
    }
    let sizes: SizeVector = dataset
        .group_sizes()
        .iter()
        .map(|&cap| cfg.init_max.min(cap).max(1))
        .collect::<Vec<_>>()
        .into();
    let mut sum: Option<Vec<f64>> = None;
    let mut block = 1;
    for r in 0..cfg.pilot_reps {
        let s = seed::derive_seed(cfg.seed, &[seed::STREAM_PILOT, r as u64]);
        let sample = sampling::stratified_sample(dataset, index, &sizes, &query.columns, s)?;
        let est = analytics::estimate(&query.function, &sample, dataset.group_sizes())?;
        block = est.block_len();
        match &mut sum {
            Some(acc) => acc.iter_mut().zip(est.values()).for_each(|(a, v)| *a += v),
            None => sum = Some(est.values().to_vec()),
        }
    }
    let reps = cfg.pilot_reps as f64;
    let mean = sum
        .expect("at least one pilot")
        .into_iter()
        .map(|v| v / reps)
        .collect();
    ResultVector::new(mean, block)
}

/// Converts the request into an L2 bound and runs [`l2miss`].
pub fn run_with_metric(
    dataset: &Dataset,
    index: &GroupIndex,
    query: &Query,
    req: &ConversionRequest,
    delta: f64,
    cfg: &MissConfig,
) -> Result<MissOutcome> {
    let entries = dataset.num_groups() * query.block_len();
    let pilot = match req.metric {
        TargetMetric::Ordering => {
            if query.block_len() != 1 {
                return Err(Error::Unsupported(
                    "ordering needs one scalar per group".into(),
                ));
            }
            cfg.validate(dataset.group_sizes())?;
            Some(pilot_estimate(dataset, index, query, cfg)?)
        }
        _ => None,
    };
    let eps = convert_bound(req, entries, pilot.as_ref())?;
    let mut outcome = l2miss(dataset, index, query, eps, delta, cfg)?;
    outcome.metric = Some(MetricContext {
        metric: req.metric,
        user_epsilon: req.epsilon,
        internal_epsilon: eps,
        pilot: pilot.map(|p| p.values().to_vec()),
    });
    Ok(outcome)
}

/// `eps* ||theta||`, the absolute bound for a relative bound `eps*`.
pub fn relative_bound(eps_rel: f64, theta: &ResultVector) -> Result<f64> {
    if !(eps_rel > 0.0) {
        return Err(invalid(format!(
            "relative error bound must be positive, got {eps_rel}"
        )));
    }
    let eps = eps_rel * theta.l2_norm();
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(
            "relative bound is undefined for a zero or non-finite reference result",
        ));
    }
    Ok(eps)
}
