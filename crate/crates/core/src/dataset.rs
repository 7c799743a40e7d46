//! Columnar in-memory tables with a single group-by column, the inverted
//! index over it, synthetic data generation and CSV ingestion.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution as _, Exp, Normal, Pareto, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, Query, ResultVector};
use crate::error::{invalid, Error, Result};
use crate::seed;

/// Immutable table: one categorical group column plus real-valued measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    labels: Vec<String>,
    group_ids: Vec<u32>,
    measure_names: Vec<String>,
    measures: Vec<Vec<f64>>,
    group_sizes: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from dense group ids.
    ///
    /// `labels[g]` names group `g`. Every group must own at least one row and
    /// every measure column must have one value per row.
    pub fn new(
        labels: Vec<String>,
        group_ids: Vec<u32>,
        measure_names: Vec<String>,
        measures: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if group_ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if measure_names.len() != measures.len() {
            return Err(invalid("measure names and columns differ in count"));
        }
        if let Some(col) = measures.iter().position(|c| c.len() != group_ids.len()) {
            return Err(invalid(format!(
                "measure `{}` has {} values for {} rows",
                measure_names[col],
                measures[col].len(),
                group_ids.len()
            )));
        }
        let m = labels.len();
        let mut group_sizes = vec![0usize; m];
        for (row, &g) in group_ids.iter().enumerate() {
            let g = g as usize;
            if g >= m {
                return Err(invalid(format!(
                    "row {row}: group id {g} out of range 0..{m}"
                )));
            }
            group_sizes[g] += 1;
        }
        if let Some(g) = group_sizes.iter().position(|&s| s == 0) {
            return Err(invalid(format!("group `{}` has no rows", labels[g])));
        }
        Ok(Self {
            labels,
            group_ids,
            measure_names,
            measures,
            group_sizes,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.group_ids.len()
    }

    pub fn num_groups(&self) -> usize {
        self.labels.len()
    }

    /// Per-group row counts `|D|_i`.
    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_ids(&self) -> &[u32] {
        &self.group_ids
    }

    pub fn measure_names(&self) -> &[String] {
        &self.measure_names
    }

    pub fn measure(&self, column: usize) -> &[f64] {
        &self.measures[column]
    }

    pub fn measure_index(&self, name: &str) -> Result<usize> {
        self.measure_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Copies the listed measure columns of one group, in index order.
    pub fn group_columns(
        &self,
        index: &GroupIndex,
        group: usize,
        columns: &[usize],
    ) -> Vec<Vec<f64>> {
        let rows = index.list(group);
        columns
            .iter()
            .map(|&c| {
                let col = &self.measures[c];
                rows.iter().map(|&r| col[r]).collect()
            })
            .collect()
    }

    /// Writes the table as CSV with the group column first.
    pub fn write_csv<W: io::Write>(&self, group_column: &str, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![group_column.to_string()];
        header.extend(self.measure_names.iter().cloned());
        out.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for row in 0..self.num_rows() {
            record.clear();
            record.push(self.labels[self.group_ids[row] as usize].clone());
            for col in &self.measures {
                record.push(format_real(col[row]));
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, group_column: &str, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(group_column, io::BufWriter::new(file))
    }
}

// Shortest representation that parses back to the same bits.
fn format_real(v: f64) -> String {
    let mut buf = format!("{v:?}");
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

/// Inverted lists: for each group, the sorted row positions it owns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    lists: Vec<Vec<usize>>,
}

impl GroupIndex {
    pub fn list(&self, group: usize) -> &[usize] {
        &self.lists[group]
    }

    pub fn num_groups(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }
}

pub fn build_index(dataset: &Dataset) -> GroupIndex {
    let mut lists: Vec<Vec<usize>> = dataset
        .group_sizes()
        .iter()
        .map(|&s| Vec::with_capacity(s))
        .collect();
    for (row, &g) in dataset.group_ids().iter().enumerate() {
        lists[g as usize].push(row);
    }
    GroupIndex { lists }
}

/// Ground truth `θ` of a query computed on every row.
pub fn true_result(dataset: &Dataset, index: &GroupIndex, query: &Query) -> Result<ResultVector> {
    query.validate(dataset)?;
    let blocks = (0..dataset.num_groups())
        .into_par_iter()
        .map(|g| {
            let cols = dataset.group_columns(index, g, &query.columns);
            let views: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            analytics::evaluate_group(&query.function, &views, g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultVector::from_blocks(blocks))
}

/// Data-generating distribution for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Distribution {
    Normal {
        mean: f64,
        std_dev: f64,
    },
    Exponential {
        scale: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Pareto with minimum 1.
    Pareto {
        shape: f64,
    },
}

impl Distribution {
    /// Parses a name plus positional parameters, e.g. `("normal", [1.0, 1.0])`.
    ///
    /// Missing parameters take the textbook defaults: Normal(0,1),
    /// Exponential(1), Uniform(0,1), Pareto(shape 1).
    pub fn parse(name: &str, params: &[f64]) -> Result<Self> {
        let p = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let max_params = match name.to_ascii_lowercase().as_str() {
            "normal" | "uniform" => 2,
            _ => 1,
        };
        if params.len() > max_params {
            return Err(invalid(format!(
                "{name}: expected at most {max_params} parameters"
            )));
        }
        let dist = match name.to_ascii_lowercase().as_str() {
            "normal" => Distribution::Normal {
                mean: p(0, 0.0),
                std_dev: p(1, 1.0),
            },
            "exp" | "exponential" => Distribution::Exponential { scale: p(0, 1.0) },
            "uniform" => Distribution::Uniform {
                low: p(0, 0.0),
                high: p(1, 1.0),
            },
            "pareto" => Distribution::Pareto { shape: p(0, 1.0) },
            other => return Err(invalid(format!("unknown distribution `{other}`"))),
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Normal { mean, std_dev } => {
                mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0
            }
            Distribution::Exponential { scale } => scale.is_finite() && scale > 0.0,
            Distribution::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low < high
            }
            Distribution::Pareto { shape } => shape.is_finite() && shape > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid distribution parameters: {self}")))
        }
    }

    /// Analytic mean, `None` when it is infinite.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            Distribution::Normal { mean, .. } => Some(mean),
            Distribution::Exponential { scale } => Some(scale),
            Distribution::Uniform { low, high } => Some(0.5 * (low + high)),
            Distribution::Pareto { shape } if shape > 1.0 => Some(shape / (shape - 1.0)),
            Distribution::Pareto { .. } => None,
        }
    }

    /// Analytic standard deviation, `None` when it is infinite.
    pub fn std_dev(&self) -> Option<f64> {
        match *self {
            Distribution::Normal { std_dev, .. } => Some(std_dev),
            Distribution::Exponential { scale } => Some(scale),
            Distribution::Uniform { low, high } => Some((high - low) / 12f64.sqrt()),
            Distribution::Pareto { shape } if shape > 2.0 => {
                Some((shape / ((shape - 1.0).powi(2) * (shape - 2.0))).sqrt())
            }
            Distribution::Pareto { .. } => None,
        }
    }

    /// Short name used in case identifiers, e.g. `Pareto3`.
    pub fn label(&self) -> String {
        match *self {
            Distribution::Normal { .. } => "Normal".into(),
            Distribution::Exponential { .. } => "Exp".into(),
            Distribution::Uniform { .. } => "Uniform".into(),
            Distribution::Pareto { shape } => format!("Pareto{shape}"),
        }
    }

    fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>, count: usize) {
        match *self {
            Distribution::Normal { mean, std_dev } => {
                let d = Normal::new(mean, std_dev).expect("validated");
                out.extend(d.sample_iter(rng).take(count));
            }
            Distribution::Exponential { scale } => {
                let d = Exp::new(1.0 / scale).expect("validated");
                out.extend(d.sample_iter(rng).take(count));
            }
            Distribution::Uniform { low, high } => {
                let d = Uniform::new(low, high).expect("validated");
                out.extend(d.sample_iter(rng).take(count));
            }
            Distribution::Pareto { shape } => {
                let d = Pareto::new(1.0, shape).expect("validated");
                out.extend(d.sample_iter(rng).take(count));
            }
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Distribution::Normal { mean, std_dev } => write!(f, "Normal({mean}, {std_dev})"),
            Distribution::Exponential { scale } => write!(f, "Exponential({scale})"),
            Distribution::Uniform { low, high } => write!(f, "Uniform({low}, {high})"),
            Distribution::Pareto { shape } => write!(f, "Pareto({shape})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub distribution: Distribution,
    pub rows: usize,
}

/// Recipe for a synthetic single-measure dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub groups: Vec<GroupSpec>,
    /// Group `i` is shifted by `i * bias * |mean_i|`.
    pub bias: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// `m` groups drawn from the same distribution.
    pub fn homogeneous(
        distribution: Distribution,
        groups: usize,
        rows_per_group: usize,
        bias: f64,
        seed: u64,
    ) -> Self {
        Self {
            groups: vec![
                GroupSpec {
                    distribution,
                    rows: rows_per_group,
                };
                groups
            ],
            bias,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(invalid("generator needs at least one group"));
        }
        for g in &self.groups {
            g.distribution.validate()?;
            if g.rows == 0 {
                return Err(invalid("rows per group must be at least 1"));
            }
        }
        if !self.bias.is_finite() {
            return Err(invalid("group bias must be finite"));
        }
        Ok(())
    }
}

pub const GENERATED_MEASURE: &str = "value";

/// Draws a dataset; a pure function of `spec`.
///
/// Rows of different groups are interleaved by a seeded shuffle so that the
/// inverted lists are genuinely scattered over the table.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let per_group: Vec<Vec<f64>> = spec
        .groups
        .par_iter()
        .enumerate()
        .map(|(g, gs)| {
            let mut rng = seed::rng(spec.seed, &[seed::STREAM_GENERATE, g as u64]);
            let mut values = Vec::with_capacity(gs.rows);
            gs.distribution.draw_into(&mut rng, &mut values, gs.rows);
            let reference = gs
                .distribution
                .mean()
                .unwrap_or_else(|| values.iter().sum::<f64>() / values.len() as f64);
            let shift = g as f64 * spec.bias * reference.abs();
            if shift != 0.0 {
                values.iter_mut().for_each(|v| *v += shift);
            }
            values
        })
        .collect();

    let total: usize = spec.groups.iter().map(|g| g.rows).sum();
    let mut group_ids: Vec<u32> = Vec::with_capacity(total);
    for (g, gs) in spec.groups.iter().enumerate() {
        group_ids.extend(std::iter::repeat_n(g as u32, gs.rows));
    }
    let mut rng = seed::rng(spec.seed, &[seed::STREAM_GENERATE, u64::MAX]);
    group_ids.shuffle(&mut rng);

    let mut cursor = vec![0usize; spec.groups.len()];
    let values: Vec<f64> = group_ids
        .iter()
        .map(|&g| {
            let g = g as usize;
            let v = per_group[g][cursor[g]];
            cursor[g] += 1;
            v
        })
        .collect();

    let labels = (0..spec.groups.len()).map(|g| format!("g{g}")).collect();
    Dataset::new(
        labels,
        group_ids,
        vec![GENERATED_MEASURE.to_string()],
        vec![values],
    )
}

/// Reads a CSV with a header row. Group labels become dense ids in order of
/// first appearance. Parse errors cite the 1-based data row (header excluded).
pub fn load_csv(
    path: impl AsRef<Path>,
    group_column: &str,
    measure_columns: &[&str],
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(io::BufReader::new(file), group_column, measure_columns)
}

pub fn read_csv<R: io::Read>(
    reader: R,
    group_column: &str,
    measure_columns: &[&str],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let group_pos = find(group_column)?;
    let measure_pos = measure_columns
        .iter()
        .map(|m| find(m))
        .collect::<Result<Vec<_>>>()?;

    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut labels = Vec::new();
    let mut group_ids = Vec::new();
    let mut measures: Vec<Vec<f64>> = vec![Vec::new(); measure_pos.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let label = record.get(group_pos).unwrap_or("").trim();
        let id = match ids.get(label) {
            Some(&id) => id,
            None => {
                let id = labels.len() as u32;
                ids.insert(label.to_string(), id);
                labels.push(label.to_string());
                id
            }
        };
        group_ids.push(id);
        for (k, &pos) in measure_pos.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: measure_columns[k].to_string(),
                value: cell.to_string(),
            })?;
            measures[k].push(v);
        }
    }
    if group_ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(
        labels,
        group_ids,
        measure_columns.iter().map(|s| s.to_string()).collect(),
        measures,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{AnalyticalFunction, Comparator, Predicate};

    fn tiny(labels: &[&str], values: &[f64]) -> Dataset {
        let mut csv = String::from("g,v\n");
        for (l, v) in labels.iter().zip(values) {
            csv.push_str(&format!("{l},{v}\n"));
        }
        read_csv(csv.as_bytes(), "g", &["v"]).unwrap()
    }

    #[test]
    fn csv_groups_in_first_appearance_order() {
        let d = tiny(&["a", "a", "b"], &[1.0, 2.0, 3.0]);
        assert_eq!(d.num_groups(), 2);
        assert_eq!(d.group_sizes(), &[2, 1]);
        assert_eq!(d.labels(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn csv_header_only_is_empty() {
        let err = read_csv("g,v\n".as_bytes(), "g", &["v"]).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn csv_parse_error_cites_row() {
        let mut csv = String::from("g,v\n");
        for i in 1..=9 {
            let cell = if i == 7 {
                "x".to_string()
            } else {
                i.to_string()
            };
            csv.push_str(&format!("a,{cell}\n"));
        }
        let err = read_csv(csv.as_bytes(), "g", &["v"]).unwrap_err();
        match err {
            Error::Parse { row, ref value, .. } => {
                assert_eq!(row, 7);
                assert_eq!(value, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn csv_missing_column() {
        let err = read_csv("g,v\na,1\n".as_bytes(), "g", &["w"]).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "w"));
    }

    #[test]
    fn index_lists() {
        let d = tiny(&["a", "b", "a"], &[1.0, 2.0, 3.0]);
        let idx = build_index(&d);
        assert_eq!(idx.list(0), &[0, 2]);
        assert_eq!(idx.list(1), &[1]);

        let single = tiny(&["z", "z", "z", "z"], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(build_index(&single).list(0), &[0, 1, 2, 3]);
    }

    #[test]
    fn true_results() {
        let d = tiny(&["a", "a", "a"], &[1.0, 2.0, 3.0]);
        let idx = build_index(&d);
        let avg = Query::new(AnalyticalFunction::Avg, vec![0]);
        assert_eq!(true_result(&d, &idx, &avg).unwrap().values(), &[2.0]);

        let d = tiny(&["a", "a", "a"], &[-1.0, 1.0, 1.0]);
        let idx = build_index(&d);
        let prop = Query::new(
            AnalyticalFunction::Proportion {
                predicate: Predicate::new(0, Comparator::Gt, 0.0),
            },
            vec![0],
        );
        let got = true_result(&d, &idx, &prop).unwrap();
        assert!((got.values()[0] - 2.0 / 3.0).abs() < 1e-15);

        let d = tiny(&["a", "a", "a"], &[1.0, 1.0, 1.0]);
        let idx = build_index(&d);
        let var = Query::new(AnalyticalFunction::Var, vec![0]);
        assert_eq!(true_result(&d, &idx, &var).unwrap().values(), &[0.0]);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::homogeneous(
            Distribution::Normal {
                mean: 0.0,
                std_dev: 1.0,
            },
            3,
            1000,
            0.0,
            42,
        );
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert!(a
            .measure(0)
            .iter()
            .zip(b.measure(0))
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.group_ids(), b.group_ids());
        let other = generate_synthetic(&GeneratorSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.measure(0), other.measure(0));
    }

    fn mean_and_sigma(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn generated_means() {
        let pareto = generate_synthetic(&GeneratorSpec::homogeneous(
            Distribution::Pareto { shape: 3.0 },
            1,
            1_000_000,
            0.0,
            5,
        ))
        .unwrap();
        let (mean, se) = mean_and_sigma(pareto.measure(0));
        assert!((mean - 1.5).abs() <= 3.0 * se, "pareto mean {mean} se {se}");
        assert!(pareto.measure(0).iter().all(|&v| v >= 1.0));

        let uniform = generate_synthetic(&GeneratorSpec::homogeneous(
            Distribution::Uniform {
                low: 0.0,
                high: 1.0,
            },
            1,
            1_000_000,
            0.0,
            6,
        ))
        .unwrap();
        let (mean, se) = mean_and_sigma(uniform.measure(0));
        assert!((mean - 0.5).abs() <= 3.0 * se);
        let idx = build_index(&uniform);
        let theta = true_result(
            &uniform,
            &idx,
            &Query::new(AnalyticalFunction::Avg, vec![0]),
        )
        .unwrap();
        assert!((theta.values()[0] - 0.5).abs() <= 0.005);
    }

    #[test]
    fn group_bias_shifts_by_relative_mean() {
        let spec = GeneratorSpec::homogeneous(
            Distribution::Uniform {
                low: 1.0,
                high: 3.0,
            },
            3,
            200_000,
            0.05,
            9,
        );
        let d = generate_synthetic(&spec).unwrap();
        let idx = build_index(&d);
        let theta = true_result(&d, &idx, &Query::new(AnalyticalFunction::Avg, vec![0])).unwrap();
        // Means 2.0, 2.1, 2.2 up to sampling noise (se ~ 0.0013).
        for (g, want) in [2.0, 2.1, 2.2].iter().enumerate() {
            assert!(
                (theta.values()[g] - want).abs() < 0.01,
                "group {g}: {}",
                theta.values()[g]
            );
        }
    }

    #[test]
    fn invalid_distributions() {
        assert!(Distribution::parse("uniform", &[1.0, 1.0]).is_err());
        assert!(Distribution::parse("pareto", &[0.0]).is_err());
        assert!(Distribution::parse("exp", &[-1.0]).is_err());
        assert!(Distribution::parse("cauchy", &[]).is_err());
        assert_eq!(
            Distribution::parse("normal", &[]).unwrap(),
            Distribution::Normal {
                mean: 0.0,
                std_dev: 1.0
            }
        );
    }

    #[test]
    fn csv_round_trip() {
        let spec =
            GeneratorSpec::homogeneous(Distribution::Exponential { scale: 2.0 }, 2, 50, 0.1, 1);
        let d = generate_synthetic(&spec).unwrap();
        let mut buf = Vec::new();
        d.write_csv("grp", &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "grp", &[GENERATED_MEASURE]).unwrap();
        assert_eq!(back.measure(0), d.measure(0));
        assert_eq!(back.group_sizes(), d.group_sizes());
    }
}
