//! Analytical functions evaluated per group.
//!
//! A [`Query`] binds an [`AnalyticalFunction`] to the measure columns it
//! reads. Evaluation always sees the query's columns in that order: scalar
//! aggregates read column 0, regressions treat all but the last column as
//! features and the last column as the target.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::sampling::Sample;

pub const DEFAULT_MAX_ALPHA: f64 = 0.01;
const LOGREG_MAX_ITER: usize = 100;
const LOGREG_STEP_TOL: f64 = 1e-6;
const LOGREG_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Comparator {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "<" | "lt" => Comparator::Lt,
            "<=" | "le" => Comparator::Le,
            ">" | "gt" => Comparator::Gt,
            ">=" | "ge" => Comparator::Ge,
            "=" | "==" | "eq" => Comparator::Eq,
            "!=" | "ne" => Comparator::Ne,
            other => return Err(invalid(format!("unknown comparator `{other}`"))),
        })
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }
}

/// `(column, comparator, constant)`; `column` indexes the query's columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: usize,
    pub cmp: Comparator,
    pub value: f64,
}

impl Predicate {
    pub fn new(column: usize, cmp: Comparator, value: f64) -> Self {
        Self { column, cmp, value }
    }

    #[inline]
    pub fn test(&self, v: f64) -> bool {
        match self.cmp {
            Comparator::Lt => v < self.value,
            Comparator::Le => v <= self.value,
            Comparator::Gt => v > self.value,
            Comparator::Ge => v >= self.value,
            Comparator::Eq => v == self.value,
            Comparator::Ne => v != self.value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticalFunction {
    Avg,
    /// Unbiased sample variance.
    Var,
    Proportion {
        predicate: Predicate,
    },
    Sum,
    Count {
        predicate: Predicate,
    },
    /// Lower order statistic at rank `ceil(q n)`. Its bootstrap is consistent
    /// when the density at the q-quantile is positive and continuous.
    Quantile {
        q: f64,
    },
    Median,
    /// The `1 - alpha` quantile standing in for MAX.
    MaxApprox {
        alpha: f64,
    },
    /// Exact sample maximum. The bootstrap is inconsistent for it; it exists
    /// so that failure handling can be exercised.
    Max,
    LinReg,
    LogReg,
}

impl AnalyticalFunction {
    pub fn name(&self) -> &'static str {
        match self {
            AnalyticalFunction::Avg => "AVG",
            AnalyticalFunction::Var => "VAR",
            AnalyticalFunction::Proportion { .. } => "PROPORTION",
            AnalyticalFunction::Sum => "SUM",
            AnalyticalFunction::Count { .. } => "COUNT",
            AnalyticalFunction::Quantile { .. } => "QUANTILE",
            AnalyticalFunction::Median => "MEDIAN",
            AnalyticalFunction::MaxApprox { .. } => "MAX_APPROX",
            AnalyticalFunction::Max => "MAX",
            AnalyticalFunction::LinReg => "LINREG",
            AnalyticalFunction::LogReg => "LOGREG",
        }
    }

    /// Parses `name[:arg[:arg]]`, case-insensitive: `avg`, `var`, `sum`,
    /// `median`, `max`, `linreg`, `logreg`, `quantile:0.9`,
    /// `max_approx[:alpha]`, `proportion:>:2.5`, `count:<=:0`. Predicates
    /// test the first query column.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let number = |i: usize| -> Result<f64> {
            let a = args
                .get(i)
                .ok_or_else(|| invalid(format!("{name}: missing argument {}", i + 1)))?;
            a.trim()
                .parse()
                .map_err(|_| invalid(format!("{name}: `{a}` is not a number")))
        };
        let arity = |n: usize| -> Result<()> {
            if args.len() > n {
                Err(invalid(format!("{name}: expected at most {n} arguments")))
            } else {
                Ok(())
            }
        };
        let predicate = || -> Result<Predicate> {
            arity(2)?;
            let cmp = args
                .first()
                .ok_or_else(|| invalid(format!("{name}: missing comparator")))?;
            Ok(Predicate::new(
                0,
                Comparator::parse(cmp.trim())?,
                number(1)?,
            ))
        };
        let f = match name.as_str() {
            "avg" | "mean" => AnalyticalFunction::Avg,
            "var" => AnalyticalFunction::Var,
            "sum" => AnalyticalFunction::Sum,
            "median" => AnalyticalFunction::Median,
            "max" => AnalyticalFunction::Max,
            "linreg" => AnalyticalFunction::LinReg,
            "logreg" => AnalyticalFunction::LogReg,
            "quantile" => {
                arity(1)?;
                AnalyticalFunction::Quantile { q: number(0)? }
            }
            "max_approx" => {
                arity(1)?;
                let alpha = if args.is_empty() {
                    DEFAULT_MAX_ALPHA
                } else {
                    number(0)?
                };
                AnalyticalFunction::MaxApprox { alpha }
            }
            "proportion" => AnalyticalFunction::Proportion {
                predicate: predicate()?,
            },
            "count" => AnalyticalFunction::Count {
                predicate: predicate()?,
            },
            other => return Err(invalid(format!("unknown function `{other}`"))),
        };
        if !matches!(
            f,
            AnalyticalFunction::Quantile { .. } | AnalyticalFunction::MaxApprox { .. }
        ) && !f.has_predicate()
        {
            arity(0)?;
        }
        Ok(f)
    }

    fn has_predicate(&self) -> bool {
        matches!(
            self,
            AnalyticalFunction::Proportion { .. } | AnalyticalFunction::Count { .. }
        )
    }

    pub fn is_regression(&self) -> bool {
        matches!(
            self,
            AnalyticalFunction::LinReg | AnalyticalFunction::LogReg
        )
    }

    /// True when the bootstrap is known not to estimate this function's error
    /// consistently (MAX, and MAX_APPROX standing in for it).
    pub fn bootstrap_inconsistent(&self) -> bool {
        matches!(
            self,
            AnalyticalFunction::Max | AnalyticalFunction::MaxApprox { .. }
        )
    }

    /// Entries per group in the flattened result.
    pub fn block_len(&self, num_columns: usize) -> usize {
        if self.is_regression() {
            num_columns
        } else {
            1
        }
    }

    pub fn validate(&self, num_columns: usize) -> Result<()> {
        match *self {
            AnalyticalFunction::Quantile { q } if !(q > 0.0 && q < 1.0) => {
                Err(invalid(format!("QUANTILE q must lie in (0, 1), got {q}")))
            }
            AnalyticalFunction::MaxApprox { alpha } if !(alpha > 0.0 && alpha < 0.5) => {
                Err(invalid(format!(
                    "MAX_APPROX alpha must lie in (0, 0.5), got {alpha}"
                )))
            }
            AnalyticalFunction::Proportion { predicate }
            | AnalyticalFunction::Count { predicate }
                if predicate.column >= num_columns =>
            {
                Err(invalid("predicate column outside the query columns"))
            }
            AnalyticalFunction::LinReg | AnalyticalFunction::LogReg if num_columns < 2 => {
                Err(invalid(format!(
                    "{} needs at least one feature and a target column",
                    self.name()
                )))
            }
            _ if num_columns == 0 => Err(invalid("query reads no columns")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AnalyticalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticalFunction::Proportion { predicate }
            | AnalyticalFunction::Count { predicate } => write!(
                f,
                "{}(c{} {} {})",
                self.name(),
                predicate.column,
                predicate.cmp.symbol(),
                predicate.value
            ),
            AnalyticalFunction::Quantile { q } => write!(f, "QUANTILE({q})"),
            AnalyticalFunction::MaxApprox { alpha } => write!(f, "MAX_APPROX({alpha})"),
            _ => f.write_str(self.name()),
        }
    }
}

/// A function bound to dataset measure columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub function: AnalyticalFunction,
    pub columns: Vec<usize>,
}

impl Query {
    pub fn new(function: AnalyticalFunction, columns: Vec<usize>) -> Self {
        Self { function, columns }
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        self.function.validate(self.columns.len())?;
        if let Some(&c) = self
            .columns
            .iter()
            .find(|&&c| c >= dataset.measure_names().len())
        {
            return Err(invalid(format!("measure column {c} does not exist")));
        }
        if self.function.is_regression() && dataset.num_groups() > 1 {
            return Err(Error::Unsupported(format!(
                "{} is only supported on single-group data",
                self.function.name()
            )));
        }
        if let AnalyticalFunction::LogReg = self.function {
            let target = dataset.measure(*self.columns.last().expect("validated"));
            if target.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(invalid("LOGREG target must be 0/1"));
            }
        }
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        self.function.block_len(self.columns.len())
    }
}

/// Per-group result blocks flattened into one vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultVector {
    values: Vec<f64>,
    block: usize,
}

impl ResultVector {
    pub fn new(values: Vec<f64>, block: usize) -> Result<Self> {
        if block == 0 || !values.len().is_multiple_of(block) {
            return Err(invalid(format!(
                "{} values do not split into blocks of {block}",
                values.len()
            )));
        }
        Ok(Self { values, block })
    }

    /// One scalar per group.
    pub fn scalars(values: Vec<f64>) -> Self {
        Self { values, block: 1 }
    }

    pub(crate) fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        let block = blocks.first().map_or(1, Vec::len);
        Self {
            values: blocks.into_iter().flatten().collect(),
            block,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block_len(&self) -> usize {
        self.block
    }

    pub fn num_groups(&self) -> usize {
        self.values.len() / self.block
    }

    pub fn group(&self, g: usize) -> &[f64] {
        &self.values[g * self.block..(g + 1) * self.block]
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_layout(&self, other: &ResultVector) -> bool {
        self.block == other.block && self.values.len() == other.values.len()
    }
}

/// Evaluates `f` on every group of a sample.
pub fn evaluate(f: &AnalyticalFunction, sample: &Sample) -> Result<ResultVector> {
    let blocks = sample
        .groups()
        .iter()
        .enumerate()
        .map(|(g, gs)| {
            let views: Vec<&[f64]> = gs.columns.iter().map(Vec::as_slice).collect();
            evaluate_group(f, &views, g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultVector::from_blocks(blocks))
}

/// Evaluates `f` on one group's columns. `group` only labels errors.
pub fn evaluate_group(
    f: &AnalyticalFunction,
    columns: &[&[f64]],
    group: usize,
) -> Result<Vec<f64>> {
    let values = columns.first().copied().unwrap_or(&[]);
    let n = values.len();
    if n == 0 {
        return Err(Error::InsufficientData {
            group,
            len: 0,
            function: f.name(),
        });
    }
    let scalar = match *f {
        AnalyticalFunction::Avg => mean(values),
        AnalyticalFunction::Sum => values.iter().sum(),
        AnalyticalFunction::Var => {
            if n < 2 {
                return Err(Error::InsufficientData {
                    group,
                    len: n,
                    function: "VAR",
                });
            }
            variance(values)
        }
        AnalyticalFunction::Proportion { predicate } => {
            count_matching(columns[predicate.column], &predicate) as f64 / n as f64
        }
        AnalyticalFunction::Count { predicate } => {
            count_matching(columns[predicate.column], &predicate) as f64
        }
        AnalyticalFunction::Quantile { q } => quantile(values, q),
        AnalyticalFunction::Median => quantile(values, 0.5),
        AnalyticalFunction::MaxApprox { alpha } => quantile(values, 1.0 - alpha),
        AnalyticalFunction::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AnalyticalFunction::LinReg => return linear_regression(columns, group),
        AnalyticalFunction::LogReg => return logistic_regression(columns),
    };
    Ok(vec![scalar])
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

fn count_matching(values: &[f64], p: &Predicate) -> usize {
    values.iter().filter(|&&v| p.test(v)).count()
}

/// `ceil(p * n)` clamped to `[1, n]`, treating products within 1e-9 of an
/// integer as that integer so that e.g. `0.95 * 500` ranks 475.
pub(crate) fn ceil_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let nearest = x.round();
    let r = if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (r.max(1.0) as usize).min(n)
}

/// Lower order statistic at 1-based rank `ceil(q n)`, no interpolation.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let k = ceil_rank(q, values.len()) - 1;
    let mut buf = values.to_vec();
    *buf.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Empirical `1 - alpha` quantile used to approximate MAX.
pub fn max_approx(values: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if values.is_empty() {
        return Err(invalid("max_approx of an empty input"));
    }
    Ok(quantile(values, 1.0 - alpha))
}

fn design(columns: &[&[f64]]) -> Vec<Vec<f64>> {
    let features = &columns[..columns.len() - 1];
    (0..columns[0].len())
        .map(|i| {
            std::iter::once(1.0)
                .chain(features.iter().map(|c| c[i]))
                .collect()
        })
        .collect()
}

/// Ordinary least squares; returns `(intercept, slopes...)`.
fn linear_regression(columns: &[&[f64]], group: usize) -> Result<Vec<f64>> {
    let target = columns[columns.len() - 1];
    let x = design(columns);
    linalg::lstsq(&x, target, 1e-10).map_err(|_| Error::InsufficientData {
        group,
        len: target.len(),
        function: "LINREG",
    })
}

/// Damped Newton (IRLS) on the mean log-likelihood.
fn logistic_regression(columns: &[&[f64]]) -> Result<Vec<f64>> {
    let y = columns[columns.len() - 1];
    let x = design(columns);
    let n = y.len() as f64;
    let k = x[0].len();
    let mut beta = vec![0.0; k];

    let loglik = |b: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(row, &yi)| {
                let eta: f64 = row.iter().zip(b).map(|(a, c)| a * c).sum();
                // log(1 + e^eta) computed stably
                let softplus = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                yi * eta - softplus
            })
            .sum::<f64>()
            / n
    };

    let mut current = loglik(&beta);
    for _ in 0..LOGREG_MAX_ITER {
        let mut grad = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, c)| a * c).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            for i in 0..k {
                grad[i] += (yi - p) * row[i] / n;
                for j in 0..k {
                    hess[i][j] += w * row[i] * row[j] / n;
                }
            }
        }
        let step = linalg::solve(&hess, &grad).map_err(|_| Error::NotConverged {
            iterations: LOGREG_MAX_ITER,
        })?;
        // On separable data the gradient vanishes while the Newton step does
        // not, so both must be small.
        let settled = step
            .iter()
            .zip(&beta)
            .all(|(s, b)| s.abs() <= LOGREG_STEP_TOL * (1.0 + b.abs()));
        if settled && grad.iter().all(|g| g.abs() <= LOGREG_GRAD_TOL) {
            return Ok(beta);
        }
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let value = loglik(&trial);
            if value >= current || t < 1e-10 {
                beta = trial;
                current = value;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NotConverged {
        iterations: LOGREG_MAX_ITER,
    })
}

/// Rewrites SUM as `|D|_i * AVG` and COUNT as `|D|_i * PROPORTION`.
///
/// Returns the consistent function and the per-group scale `s_i`.
pub fn transform_inconsistent(
    f: &AnalyticalFunction,
    group_sizes: &[usize],
) -> Result<(AnalyticalFunction, Vec<f64>)> {
    let scale = group_sizes.iter().map(|&s| s as f64).collect();
    match *f {
        AnalyticalFunction::Sum => Ok((AnalyticalFunction::Avg, scale)),
        AnalyticalFunction::Count { predicate } => {
            Ok((AnalyticalFunction::Proportion { predicate }, scale))
        }
        AnalyticalFunction::Max => Err(Error::NotTransformable(f.name().into())),
        _ => Err(Error::AlreadyConsistent(f.name().into())),
    }
}

/// Population-scale estimate from a sample: SUM and COUNT are evaluated as
/// `|D|_i` times AVG and PROPORTION, everything else as is.
pub fn estimate(
    f: &AnalyticalFunction,
    sample: &Sample,
    group_sizes: &[usize],
) -> Result<ResultVector> {
    match f {
        AnalyticalFunction::Sum | AnalyticalFunction::Count { .. } => {
            let (inner, scale) = transform_inconsistent(f, group_sizes)?;
            let est = evaluate(&inner, sample)?;
            Ok(ResultVector::scalars(
                est.values()
                    .iter()
                    .zip(&scale)
                    .map(|(v, s)| v * s)
                    .collect(),
            ))
        }
        _ => evaluate(f, sample),
    }
}
