//! Shared fixtures for the engine benchmarks.

use sampsize_core::seed::derive_seed;
use sampsize_core::{
    build_index, generate_synthetic, Dataset, Distribution, ErrorProfile, ErrorRecord,
    GeneratorSpec, GroupIndex, ModelParams,
};

/// Normal(1, 1) groups of `rows` each, with a fixed seed.
pub fn normal_dataset(groups: usize, rows: usize) -> (Dataset, GroupIndex) {
    let dist = Distribution::Normal {
        mean: 1.0,
        std_dev: 1.0,
    };
    let data = generate_synthetic(&GeneratorSpec::homogeneous(dist, groups, rows, 0.1, 42))
        .expect("valid spec");
    let index = build_index(&data);
    (data, index)
}

/// `records` noise-free observations of `ln e = 0.5 - sum 0.5 ln n_i`.
pub fn model_profile(groups: usize, records: usize) -> ErrorProfile {
    let beta = model_params(groups);
    let mut profile = ErrorProfile::new(groups);
    for r in 0..records {
        let sizes: Vec<usize> = (0..groups)
            .map(|g| 1000 + (derive_seed(42, &[r as u64, g as u64]) % 50_000) as usize)
            .collect();
        let n: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let error = beta.log_error(&n).exp();
        profile
            .push(ErrorRecord {
                sizes: sizes.into(),
                error,
            })
            .expect("valid record");
    }
    profile
}

/// `(0.5, 0.5, ..., 0.5)` with `groups` slopes.
pub fn model_params(groups: usize) -> ModelParams {
    ModelParams::new(vec![0.5; groups + 1]).expect("valid parameters")
}
