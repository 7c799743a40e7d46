//! Property tests over the public API.

use proptest::prelude::*;
use sampsize_core::estimation::BootstrapConfig;
use sampsize_core::miss::Phase;
use sampsize_core::{
    bootstrap_error, build_index, generate_synthetic, l2miss, stratified_sample, true_result,
    AnalyticalFunction, Comparator, Dataset, Distribution, ErrorMetric, GeneratorSpec, MissConfig,
    MissStatus, Predicate, Query, SizeVector,
};

/// Group ids over `m` groups where every group owns at least one row.
fn group_ids() -> impl Strategy<Value = (usize, Vec<u32>)> {
    (1usize..=5).prop_flat_map(|m| {
        prop::collection::vec(0..m as u32, 0..300).prop_map(move |mut ids| {
            ids.extend(0..m as u32);
            (m, ids)
        })
    })
}

fn dataset(m: usize, ids: Vec<u32>, values: Vec<f64>) -> Dataset {
    let labels = (0..m).map(|g| format!("g{g}")).collect();
    Dataset::new(labels, ids, vec!["v".into()], vec![values]).unwrap()
}

/// A dataset with values in `[-100, 100)`.
fn small_dataset() -> impl Strategy<Value = Dataset> {
    group_ids().prop_flat_map(|(m, ids)| {
        let n = ids.len();
        prop::collection::vec(-100.0f64..100.0, n)
            .prop_map(move |values| dataset(m, ids.clone(), values))
    })
}

/// A dataset plus per-group sample sizes within the group sizes.
fn dataset_and_sizes() -> impl Strategy<Value = (Dataset, Vec<usize>)> {
    small_dataset().prop_flat_map(|d| {
        let sizes: Vec<BoxedStrategy<usize>> = d
            .group_sizes()
            .iter()
            .map(|&cap| (1..=cap).boxed())
            .collect();
        (Just(d), sizes)
    })
}

fn sample_of(d: &Dataset, sizes: &[usize], seed: u64) -> sampsize_core::Sample {
    let index = build_index(d);
    stratified_sample(d, &index, &SizeVector::new(sizes.to_vec()), &[0], seed).unwrap()
}

proptest! {
    #[test]
    fn index_partitions_the_rows((m, ids) in group_ids()) {
        let d = dataset(m, ids.clone(), vec![0.0; ids.len()]);
        let index = build_index(&d);
        let mut all: Vec<usize> = Vec::new();
        for (g, list) in index.lists().iter().enumerate() {
            prop_assert!(list.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(list.iter().all(|&r| ids[r] as usize == g));
            all.extend(list);
        }
        all.sort_unstable();
        prop_assert_eq!(all, (0..ids.len()).collect::<Vec<_>>());
    }

    #[test]
    fn samples_have_exact_sizes_and_distinct_members((d, sizes) in dataset_and_sizes(), seed in any::<u64>()) {
        let index = build_index(&d);
        let s = sample_of(&d, &sizes, seed);
        prop_assert_eq!(s.sizes().to_vec(), sizes);
        for (g, gs) in s.groups().iter().enumerate() {
            let mut pos = gs.positions.clone();
            pos.sort_unstable();
            pos.dedup();
            prop_assert_eq!(pos.len(), gs.len());
            for (k, &p) in gs.positions.iter().enumerate() {
                prop_assert!(index.list(g).contains(&p));
                prop_assert_eq!(gs.columns[0][k], d.measure(0)[p]);
            }
        }
    }

    #[test]
    fn resampling_preserves_group_sizes((d, sizes) in dataset_and_sizes(), seed in any::<u64>()) {
        // COUNT of an always-true predicate equals the resample size.
        let s = sample_of(&d, &sizes, seed);
        let always = AnalyticalFunction::Count { predicate: Predicate::new(0, Comparator::Gt, f64::NEG_INFINITY) };
        let cfg = BootstrapConfig::new(20, seed).unwrap();
        prop_assert_eq!(bootstrap_error(&s, &always, ErrorMetric::L2, 0.05, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn error_is_nonincreasing_in_delta(
        (d, sizes) in dataset_and_sizes(),
        seed in any::<u64>(),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s = sample_of(&d, &sizes, seed);
        let cfg = BootstrapConfig::new(50, seed).unwrap();
        let f = AnalyticalFunction::Median;
        let e_lo = bootstrap_error(&s, &f, ErrorMetric::L2, lo, &cfg).unwrap();
        let e_hi = bootstrap_error(&s, &f, ErrorMetric::L2, hi, &cfg).unwrap();
        prop_assert!(e_lo >= e_hi, "{} < {}", e_lo, e_hi);
    }

    #[test]
    fn avg_error_scales_exactly(
        (d, sizes) in dataset_and_sizes(),
        seed in any::<u64>(),
        k in -4i32..=4,
        metric in prop_oneof![
            Just(ErrorMetric::L2),
            Just(ErrorMetric::Linf),
            Just(ErrorMetric::L1),
            Just(ErrorMetric::MaxDifference),
        ],
    ) {
        // Powers of two keep every intermediate exact.
        let c = 2f64.powi(k);
        let scaled_values: Vec<f64> = d.measure(0).iter().map(|v| v * c).collect();
        let scaled = dataset(d.num_groups(), d.group_ids().to_vec(), scaled_values);
        let cfg = BootstrapConfig::new(30, seed).unwrap();
        let e = bootstrap_error(&sample_of(&d, &sizes, seed), &AnalyticalFunction::Avg, metric, 0.05, &cfg).unwrap();
        let e_scaled =
            bootstrap_error(&sample_of(&scaled, &sizes, seed), &AnalyticalFunction::Avg, metric, 0.05, &cfg).unwrap();
        prop_assert_eq!(e_scaled, c * e);
    }

    #[test]
    fn sum_is_group_size_times_avg(d in small_dataset()) {
        let index = build_index(&d);
        let sum = true_result(&d, &index, &Query::new(AnalyticalFunction::Sum, vec![0])).unwrap();
        let avg = true_result(&d, &index, &Query::new(AnalyticalFunction::Avg, vec![0])).unwrap();
        for ((s, a), &n) in sum.values().iter().zip(avg.values()).zip(d.group_sizes()) {
            // One rounding in the division and one in the product.
            prop_assert!((s - a * n as f64).abs() <= 4.0 * f64::EPSILON * s.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sizing_loop_terminates_with_a_consistent_trace(
        groups in 1usize..=3,
        eps in 0.02f64..0.3,
        seed in any::<u64>(),
    ) {
        let spec = GeneratorSpec::homogeneous(Distribution::Normal { mean: 1.0, std_dev: 1.0 }, groups, 20_000, 0.1, 5);
        let d = generate_synthetic(&spec).unwrap();
        let index = build_index(&d);
        let q = Query::new(AnalyticalFunction::Avg, vec![0]);
        let cfg = MissConfig {
            resamples: 100,
            init_min: 100,
            init_max: 300,
            max_iterations: 40,
            ..MissConfig::for_groups(groups).with_seed(seed)
        };
        let out = l2miss(&d, &index, &q, eps, 0.05, &cfg).unwrap();
        prop_assert!(out.iterations <= cfg.max_iterations);
        prop_assert_eq!(out.trace.last().unwrap().status, Some(out.status));
        if out.status == MissStatus::Satisfied {
            prop_assert!(out.error.unwrap() <= eps);
        }
        // Growth guard: consecutive predictions grow in every group while unmet.
        for w in out.trace.windows(2) {
            if let (Phase::Predict, Phase::Predict, Some(prev), Some(next)) =
                (w[0].phase, w[1].phase, w[0].sizes.as_ref(), w[1].sizes.as_ref())
            {
                if w[0].error.unwrap() > eps {
                    for (g, (a, b)) in prev.iter().zip(next.iter()).enumerate() {
                        prop_assert!(b > a || b == &d.group_sizes()[g], "group {}: {} -> {}", g, a, b);
                    }
                }
            }
        }
        let again = l2miss(&d, &index, &q, eps, 0.05, &cfg).unwrap();
        prop_assert_eq!(again.sizes, out.sizes);
        prop_assert_eq!(again.error, out.error);
        prop_assert_eq!(again.status, out.status);
    }
}
