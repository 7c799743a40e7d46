//! Sample-size optimization for sampling-based approximate query processing.
//!
//! Given a grouped dataset, an analytical function and an error constraint
//! `Pr[d(estimate, truth) <= eps] >= 1 - delta`, the engine searches for a
//! near-minimal stratified sample size. Each iteration draws a sample,
//! estimates its error by bootstrap, fits a log-linear error model to the
//! accumulated profile and predicts the next size in closed form.
//!
//! ```no_run
//! use sampsize_core::{
//!     build_index, generate_synthetic, l2miss, AnalyticalFunction, Distribution, GeneratorSpec,
//!     MissConfig, Query,
//! };
//!
//! let spec = GeneratorSpec::homogeneous(Distribution::Normal { mean: 1.0, std_dev: 1.0 }, 1, 1_000_000, 0.0, 7);
//! let data = generate_synthetic(&spec).unwrap();
//! let index = build_index(&data);
//! let query = Query::new(AnalyticalFunction::Avg, vec![0]);
//! let cfg = MissConfig::for_groups(1);
//! let outcome = l2miss(&data, &index, &query, 0.01, 0.05, &cfg).unwrap();
//! println!("{:?} at n = {:?}", outcome.status, outcome.sizes);
//! ```

// `!(x > 0.0)` checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod miss;
pub mod model;
pub mod sampling;
pub mod seed;

pub use analytics::{AnalyticalFunction, Comparator, Predicate, Query, ResultVector};
pub use dataset::{
    build_index, generate_synthetic, load_csv, read_csv, true_result, Dataset, Distribution,
    GeneratorSpec, GroupIndex, GroupSpec,
};
pub use error::{Error, Result};
pub use estimation::{bootstrap_error, metric_eval, BootstrapConfig, ErrorConstraint, ErrorMetric};
pub use harness::{
    clt_baseline, clt_baseline_size, run_grid, run_sweep, simulated_confidence, Confidence,
    EvalReport, GridCase, GridConfig, SweepSpec,
};
pub use miss::{
    convert_bound, initialize_sizes, l2miss, order_bound, pilot_estimate, relative_bound,
    run_with_metric, ConversionRequest, MissConfig, MissOutcome, MissStatus, TargetMetric,
    TraceEntry,
};
pub use model::{
    design_row, diagnose, fit_wls, predict_sizes, r2_score, Diagnosis, DiagnosticConfig,
    ErrorProfile, ErrorRecord, ModelParams,
};
pub use sampling::{stratified_sample, Sample, SizeVector};
