//! Log-linear error model `H(n; beta) = beta_0 - sum_i beta_i log n_i`.
//!
//! The model predicts the log of the estimated error at a size vector. It is
//! fitted by weighted least squares over the error profile and inverted in
//! closed form to give the cheapest size vector meeting a target error.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, RankDeficient};
use crate::sampling::SizeVector;

pub const DEFAULT_TAU: f64 = 0.01;
const RANK_TOL: f64 = 1e-10;

/// One completed iteration: the size vector used and its estimated error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sizes: SizeVector,
    pub error: f64,
}

/// Append-only list of error records sharing one group count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    groups: usize,
    records: Vec<ErrorRecord>,
}

#[derive(Serialize, Deserialize)]
struct ProfileLine {
    iteration: usize,
    sizes: SizeVector,
    error: f64,
}

impl ErrorProfile {
    pub fn new(groups: usize) -> Self {
        Self {
            groups,
            records: Vec::new(),
        }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn records(&self) -> &[ErrorRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: ErrorRecord) -> Result<()> {
        if record.sizes.len() != self.groups {
            return Err(Error::LayoutMismatch {
                left: record.sizes.len(),
                right: self.groups,
            });
        }
        if record.sizes.contains(&0) {
            return Err(invalid("profile sizes must be at least 1"));
        }
        if !(record.error >= 0.0 && record.error.is_finite()) {
            return Err(invalid(format!(
                "profile error must be finite and non-negative, got {}",
                record.error
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// Records usable for fitting (`e > 0`).
    fn fit_records(&self) -> impl Iterator<Item = &ErrorRecord> {
        self.records.iter().filter(|r| r.error > 0.0)
    }

    /// One JSON object per line: `iteration` (1-based), `sizes`, `error`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let line = ProfileLine {
                iteration: i + 1,
                sizes: r.sizes.clone(),
                error: r.error,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut profile: Option<Self> = None;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ProfileLine = serde_json::from_str(&line)?;
            let p = profile.get_or_insert_with(|| Self::new(parsed.sizes.len()));
            p.push(ErrorRecord {
                sizes: parsed.sizes,
                error: parsed.error,
            })?;
        }
        profile.ok_or(Error::EmptyDataset)
    }
}

/// `(beta_0, beta_1, ..., beta_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(invalid("model needs an intercept and at least one slope"));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        Ok(Self(beta))
    }

    pub fn beta(&self) -> &[f64] {
        &self.0
    }

    pub fn intercept(&self) -> f64 {
        self.0[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn groups(&self) -> usize {
        self.0.len() - 1
    }

    /// Predicted log error at `n`.
    pub fn log_error(&self, n: &[f64]) -> f64 {
        self.intercept()
            - self
                .slopes()
                .iter()
                .zip(n)
                .map(|(b, v)| b * v.ln())
                .sum::<f64>()
    }
}

/// `[1, -log n_1, ..., -log n_m]`.
pub fn design_row(n: &[usize]) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(n.iter().map(|&v| -(v as f64).ln()))
        .collect()
}

/// Weighted least squares with weights `C(n)` on log-error targets.
pub fn fit_wls(profile: &ErrorProfile) -> Result<ModelParams> {
    let params = profile.groups() + 1;
    let (rows, targets): (Vec<Vec<f64>>, Vec<f64>) = profile
        .fit_records()
        .map(|r| {
            let sw = (r.sizes.total() as f64).sqrt();
            let row = design_row(&r.sizes).into_iter().map(|x| x * sw).collect();
            (row, r.error.ln() * sw)
        })
        .unzip();
    if rows.len() < params {
        return Err(Error::Underdetermined {
            records: rows.len(),
            params,
        });
    }
    let beta = linalg::lstsq(&rows, &targets, RANK_TOL)
        .map_err(|RankDeficient| Error::DegenerateProfile)?;
    ModelParams::new(beta)
}

/// Unweighted coefficient of determination on log-error targets.
pub fn r2_score(profile: &ErrorProfile, beta: &ModelParams) -> Result<f64> {
    if beta.groups() != profile.groups() {
        return Err(Error::LayoutMismatch {
            left: beta.groups(),
            right: profile.groups(),
        });
    }
    let pairs: Vec<(f64, f64)> = profile
        .fit_records()
        .map(|r| {
            let n: Vec<f64> = r.sizes.iter().map(|&v| v as f64).collect();
            (r.error.ln(), beta.log_error(&n))
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::UndefinedR2);
    }
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum();
    if ss_tot <= f64::EPSILON * mean.abs().max(1.0) * pairs.len() as f64 {
        return Err(Error::UndefinedR2);
    }
    let ss_res: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticConfig {
    pub tau: f64,
}

impl DiagnosticConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!(
                "diagnostic threshold must be positive, got {tau}"
            )));
        }
        Ok(Self { tau })
    }
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "beta", rename_all = "snake_case")]
pub enum Diagnosis {
    /// All slopes positive.
    Accepted(ModelParams),
    /// Some slope was non-positive; slopes were replaced by their mean.
    Adjusted(ModelParams),
    /// Total slope at or below the threshold: errors do not shrink with size.
    Unrecoverable,
}

impl Diagnosis {
    pub fn params(&self) -> Option<&ModelParams> {
        match self {
            Diagnosis::Accepted(p) | Diagnosis::Adjusted(p) => Some(p),
            Diagnosis::Unrecoverable => None,
        }
    }
}

pub fn diagnose(beta: &ModelParams, cfg: &DiagnosticConfig) -> Diagnosis {
    let slopes = beta.slopes();
    let sum: f64 = slopes.iter().sum();
    if sum <= cfg.tau {
        return Diagnosis::Unrecoverable;
    }
    if slopes.iter().any(|&b| b <= 0.0) {
        let mean = sum / slopes.len() as f64;
        let mut adjusted = beta.beta().to_vec();
        adjusted[1..].iter_mut().for_each(|b| *b = mean);
        return Diagnosis::Adjusted(ModelParams(adjusted));
    }
    Diagnosis::Accepted(beta.clone())
}

/// Real-valued minimizer of `sum n_i` subject to `H(n; beta) = log eps`.
pub fn predict_continuous(beta: &ModelParams, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(invalid(format!("error bound must be positive, got {eps}")));
    }
    if let Some((group, &value)) = beta.slopes().iter().enumerate().find(|(_, &b)| !(b > 0.0)) {
        return Err(Error::NonPositiveSlope { group, value });
    }
    let slopes = beta.slopes();
    let total: f64 = slopes.iter().sum();
    let entropy: f64 = slopes.iter().map(|b| b * b.ln()).sum();
    let log_scale = (beta.intercept() - entropy - eps.ln()) / total;
    Ok(slopes.iter().map(|b| b * log_scale.exp()).collect())
}

/// Rounded prediction clamped per group to `[1, available_i]`.
pub fn predict_sizes(beta: &ModelParams, eps: f64, available: &[usize]) -> Result<SizeVector> {
    if available.len() != beta.groups() {
        return Err(Error::LayoutMismatch {
            left: beta.groups(),
            right: available.len(),
        });
    }
    let cont = predict_continuous(beta, eps)?;
    Ok(cont
        .iter()
        .zip(available)
        .map(|(&v, &cap)| clamp_round(v, cap))
        .collect::<Vec<_>>()
        .into())
}

pub(crate) fn clamp_round(v: f64, cap: usize) -> usize {
    let r = v.round();
    if !(r >= 1.0) {
        1
    } else if r >= cap as f64 {
        cap
    } else {
        r as usize
    }
}
