//! Error metrics and bootstrap error estimation.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, ceil_rank, AnalyticalFunction, ResultVector};
use crate::error::{invalid, Error, Result};
use crate::sampling::Sample;
use crate::seed;

pub const DEFAULT_RESAMPLES: usize = 500;

/// Distance between an approximate and a reference result vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorMetric {
    L2,
    Linf,
    L1,
    Lp {
        p: f64,
    },
    /// Geometric mean of the absolute per-entry errors.
    GeometricMean,
    /// `max_{i,j} |(a_i - a_j) - (b_i - b_j)|`.
    MaxDifference,
}

impl fmt::Display for ErrorMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorMetric::L2 => f.write_str("L2"),
            ErrorMetric::Linf => f.write_str("Linf"),
            ErrorMetric::L1 => f.write_str("L1"),
            ErrorMetric::Lp { p } => write!(f, "L{p}"),
            ErrorMetric::GeometricMean => f.write_str("GeometricMean"),
            ErrorMetric::MaxDifference => f.write_str("MaxDifference"),
        }
    }
}

/// `Pr[d(estimate, truth) <= epsilon] >= 1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstraint {
    pub epsilon: f64,
    pub delta: f64,
}

impl ErrorConstraint {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid(format!(
                "error bound must be positive, got {epsilon}"
            )));
        }
        check_delta(delta)?;
        Ok(Self { epsilon, delta })
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "error probability must lie in (0, 1), got {delta}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, seed: u64) -> Result<Self> {
        if resamples == 0 {
            return Err(invalid("bootstrap needs at least one resample"));
        }
        Ok(Self { resamples, seed })
    }
}

pub fn metric_eval(d: ErrorMetric, estimate: &ResultVector, truth: &ResultVector) -> Result<f64> {
    if !estimate.same_layout(truth) {
        return Err(Error::LayoutMismatch {
            left: estimate.values().len(),
            right: truth.values().len(),
        });
    }
    Ok(distance(d, estimate.values(), truth.values()))
}

pub(crate) fn distance(d: ErrorMetric, a: &[f64], b: &[f64]) -> f64 {
    let diffs = a.iter().zip(b).map(|(x, y)| x - y);
    match d {
        ErrorMetric::L2 => diffs.map(|v| v * v).sum::<f64>().sqrt(),
        ErrorMetric::Linf => diffs.fold(0.0, |m, v| m.max(v.abs())),
        ErrorMetric::L1 => diffs.map(f64::abs).sum(),
        ErrorMetric::Lp { p } => diffs.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        ErrorMetric::GeometricMean => {
            let len = a.len() as f64;
            let mut log_sum = 0.0;
            for v in diffs {
                if v == 0.0 {
                    return 0.0;
                }
                log_sum += v.abs().ln();
            }
            (log_sum / len).exp()
        }
        ErrorMetric::MaxDifference => {
            // (a_i - a_j) - (b_i - b_j) = e_i - e_j, maximized by max e - min e.
            let (lo, hi) = diffs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            if lo.is_finite() {
                hi - lo
            } else {
                0.0
            }
        }
    }
}

/// Sorted bootstrap distances `d(T*_b, T)` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    distances: Vec<f64>,
    failed: usize,
}

impl BootstrapDistribution {
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Resamples whose evaluation failed and were left out.
    pub fn failed(&self) -> usize {
        self.failed
    }

    /// Upper order statistic at rank `ceil((1 - delta) B)`.
    pub fn error_at(&self, delta: f64) -> f64 {
        self.distances[ceil_rank(1.0 - delta, self.distances.len()) - 1]
    }
}

/// Stratified bootstrap: resample every group with replacement at its own
/// size, re-evaluate, and collect the distances to the plug-in estimate.
pub fn bootstrap_distribution(
    sample: &Sample,
    f: &AnalyticalFunction,
    d: ErrorMetric,
    cfg: &BootstrapConfig,
) -> Result<BootstrapDistribution> {
    if cfg.resamples == 0 {
        return Err(invalid("bootstrap needs at least one resample"));
    }
    let plug_in = analytics::evaluate(f, sample)?;
    let outcomes: Vec<Result<f64>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(cfg.seed, &[seed::STREAM_BOOTSTRAP, b as u64]);
            resample_estimate(sample, f, &mut rng).map(|est| distance(d, &est, plug_in.values()))
        })
        .collect();
    let mut distances = Vec::with_capacity(outcomes.len());
    let mut last_err = None;
    for o in outcomes {
        match o {
            Ok(v) => distances.push(v),
            Err(e) => last_err = Some(e),
        }
    }
    if distances.is_empty() {
        let reason = last_err.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::BootstrapFailed(reason));
    }
    distances.sort_by(f64::total_cmp);
    let failed = cfg.resamples - distances.len();
    Ok(BootstrapDistribution { distances, failed })
}

/// Bootstrap estimate of the `1 - delta` error quantile.
pub fn bootstrap_error(
    sample: &Sample,
    f: &AnalyticalFunction,
    d: ErrorMetric,
    delta: f64,
    cfg: &BootstrapConfig,
) -> Result<f64> {
    check_delta(delta)?;
    Ok(bootstrap_distribution(sample, f, d, cfg)?.error_at(delta))
}

fn resample_estimate<R: Rng>(
    sample: &Sample,
    f: &AnalyticalFunction,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(sample.groups().len());
    for (g, gs) in sample.groups().iter().enumerate() {
        let n = gs.len();
        match f {
            // Streaming paths: no need to materialize the resample.
            AnalyticalFunction::Avg | AnalyticalFunction::Sum => {
                let col = &gs.columns[0];
                let s: f64 = (0..n).map(|_| col[rng.random_range(0..n)]).sum();
                out.push(if matches!(f, AnalyticalFunction::Avg) {
                    s / n as f64
                } else {
                    s
                });
            }
            AnalyticalFunction::Proportion { predicate }
            | AnalyticalFunction::Count { predicate } => {
                let col = &gs.columns[predicate.column];
                let hits = (0..n)
                    .filter(|_| predicate.test(col[rng.random_range(0..n)]))
                    .count();
                out.push(if matches!(f, AnalyticalFunction::Proportion { .. }) {
                    hits as f64 / n as f64
                } else {
                    hits as f64
                });
            }
            _ => {
                let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let cols: Vec<Vec<f64>> = gs
                    .columns
                    .iter()
                    .map(|c| picks.iter().map(|&i| c[i]).collect())
                    .collect();
                let views: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                out.extend(analytics::evaluate_group(f, &views, g)?);
            }
        }
    }
    Ok(out)
}
