//! Metrics and experiment harnesses.

mod experiment;
mod metrics;
pub mod pipeline;

pub use experiment::{
    run_experiment, write_sweep_csv, ExperimentReport, ExperimentSpec, Mode, RunReport, SeedReport, SweepRow, Variant,
};
pub use metrics::{cohen_kappa, compute_metrics, confusion_matrix, KappaClasses, MetricReport, MetricSummary};
