//! Forecast metrics, reports and the experiment protocols built on them.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{mae, mase, mse, smape, MaseScale};
pub use protocol::{
    config_diff, partition_customers, partition_label, run_ablation, run_main, run_transfer, run_zero_shot,
    AblationRun, AblationVariant, DataConfig, ExperimentConfig, MainOutcome, PartitionedOutcome, PlanConfig,
    ProvenanceSummary, DEFAULT_PARTITION_SEED,
};
pub use report::{
    evaluate_model, evaluate_with_forecasts, scatter_rows, write_scatter_csv, Aggregate, EvalConfig, MetricReport,
    MetricRow, ScatterRow,
};
