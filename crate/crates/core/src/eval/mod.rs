//! Ranking metrics, evaluation reports, and the experiment suites.

mod experiments;
mod metrics;
mod plots;
mod report;

pub use metrics::{rank_metrics, rank_of, InstanceMetrics, MetricSummary};
pub use plots::grouped_bars;
pub use report::{
    build_report, evaluate, export_fusion_weights, instance_metrics, BucketReport, FusionExport, MetricReport,
    REPORT_SCHEMA_VERSION,
};
pub use experiments::{run_experiment_suite, suite_dir, summarize, Suite, SuiteResult, SuiteRow, SuiteSummary};
