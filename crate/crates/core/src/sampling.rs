//! Fixed-size uniform stratified sampling through the inverted index.
//!
//! Each stratum is sampled without replacement. Sparse strata (rate at most
//! [`GAP_RATE_THRESHOLD`]) are traversed with geometric skips over the
//! inverted list at a slightly inflated Bernoulli rate, then trimmed or topped
//! up to the exact size; denser strata use a partial Fisher-Yates shuffle kept
//! in a hash map. Both paths touch `O(n_i)` list entries.

use std::collections::{HashMap, HashSet};
use std::ops::Deref;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GroupIndex};
use crate::error::{invalid, Error, Result};
use crate::seed;

pub const GAP_RATE_THRESHOLD: f64 = 0.1;

/// Per-group sample sizes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizeVector(Vec<usize>);

impl SizeVector {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self(sizes)
    }

    /// Total sample size `C(n)`.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Checks `1 <= n_i <= |D|_i` for every group.
    pub fn check(&self, group_sizes: &[usize]) -> Result<()> {
        if self.0.len() != group_sizes.len() {
            return Err(invalid(format!(
                "size vector has {} entries for {} groups",
                self.0.len(),
                group_sizes.len()
            )));
        }
        for (group, (&size, &available)) in self.0.iter().zip(group_sizes).enumerate() {
            if size == 0 || size > available {
                return Err(Error::SizeOutOfRange {
                    group,
                    size,
                    available,
                });
            }
        }
        Ok(())
    }
}

impl Deref for SizeVector {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for SizeVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    /// Row positions in the dataset, distinct within the group.
    pub positions: Vec<usize>,
    /// Query columns gathered at `positions`.
    pub columns: Vec<Vec<f64>>,
}

impl GroupSample {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    groups: Vec<GroupSample>,
    touched: usize,
}

impl Sample {
    pub fn new(groups: Vec<GroupSample>) -> Self {
        let touched = groups.iter().map(GroupSample::len).sum();
        Self { groups, touched }
    }

    pub fn groups(&self) -> &[GroupSample] {
        &self.groups
    }

    pub fn sizes(&self) -> SizeVector {
        SizeVector(self.groups.iter().map(GroupSample::len).collect())
    }

    /// Inverted-list entries the sampler had to read, including oversampled
    /// entries that were trimmed and rejected top-up draws.
    pub fn touched_rows(&self) -> usize {
        self.touched
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Method {
    Gap,
    Shuffle,
}

fn choose_method(n: usize, len: usize) -> Method {
    if (n as f64) <= GAP_RATE_THRESHOLD * len as f64 {
        Method::Gap
    } else {
        Method::Shuffle
    }
}

/// Draws `n_i` distinct rows uniformly from each group's inverted list and
/// gathers the given measure columns. Deterministic in `seed`.
pub fn stratified_sample(
    dataset: &Dataset,
    index: &GroupIndex,
    sizes: &SizeVector,
    columns: &[usize],
    seed: u64,
) -> Result<Sample> {
    sizes.check(dataset.group_sizes())?;
    let drawn: Vec<(GroupSample, usize)> = (0..sizes.len())
        .into_par_iter()
        .map(|g| {
            let list = index.list(g);
            let n = sizes[g];
            let mut rng = seed::rng(seed, &[seed::STREAM_SAMPLE, g as u64]);
            let (picks, touched) =
                draw_positions(list.len(), n, &mut rng, choose_method(n, list.len()));
            let positions: Vec<usize> = picks.into_iter().map(|p| list[p]).collect();
            let cols = columns
                .iter()
                .map(|&c| {
                    let col = dataset.measure(c);
                    positions.iter().map(|&r| col[r]).collect()
                })
                .collect();
            (
                GroupSample {
                    positions,
                    columns: cols,
                },
                touched,
            )
        })
        .collect();
    let touched = drawn.iter().map(|(_, t)| t).sum();
    Ok(Sample {
        groups: drawn.into_iter().map(|(g, _)| g).collect(),
        touched,
    })
}

/// Returns `n` distinct offsets in `0..len` and the number of list entries read.
pub(crate) fn draw_positions(
    len: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
    method: Method,
) -> (Vec<usize>, usize) {
    debug_assert!(n >= 1 && n <= len);
    match method {
        Method::Shuffle => (sparse_shuffle(len, n, rng), n),
        Method::Gap => gap_sample(len, n, rng),
    }
}

fn sparse_shuffle(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut swapped: HashMap<usize, usize> = HashMap::with_capacity(2 * n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.random_range(i..len);
        let at_i = *swapped.get(&i).unwrap_or(&i);
        let at_j = *swapped.get(&j).unwrap_or(&j);
        out.push(at_j);
        swapped.insert(j, at_i);
    }
    out
}

fn gap_sample(len: usize, n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let nf = n as f64;
    // Inflate the rate by ~3 sd so that a top-up is rarely needed.
    let rate = (nf + 3.0 * nf.sqrt() + 5.0) / len as f64;
    if rate >= 1.0 {
        return (sparse_shuffle(len, n, rng), n);
    }
    gap_sample_at_rate(len, n, rate, rng)
}

fn gap_sample_at_rate(
    len: usize,
    n: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, usize) {
    let log_keep = (1.0 - rate).ln();
    let mut picked = Vec::with_capacity((rate * len as f64) as usize + 8);
    let mut pos = 0usize;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / log_keep).floor();
        if skip >= (len - pos) as f64 {
            break;
        }
        pos += skip as usize;
        picked.push(pos);
        pos += 1;
        if pos >= len {
            break;
        }
    }
    let mut touched = picked.len();

    if picked.len() >= n {
        // A uniform n-subset of a uniform k-subset is a uniform n-subset.
        let k = picked.len();
        for i in 0..n {
            let j = rng.random_range(i..k);
            picked.swap(i, j);
        }
        picked.truncate(n);
    } else {
        let mut seen: HashSet<usize> = picked.iter().copied().collect();
        while picked.len() < n {
            let c = rng.random_range(0..len);
            touched += 1;
            if seen.insert(c) {
                picked.push(c);
            }
        }
    }
    (picked, touched)
}
