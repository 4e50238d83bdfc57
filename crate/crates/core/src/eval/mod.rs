//! Targeting metrics, stratified reports and the benchmark-versus-SML grid.

mod grid;
mod metrics;
mod report;

pub use grid::{comparison_grid, Cell, ComparisonGrid, GridColumn, GridEntry};
pub use metrics::{
    confusion, exclusion_error, inclusion_error, r_squared, secondary_metrics, ConfusionCounts,
    SecondaryMetrics,
};
pub use report::{
    aggregate_report, fmt_metric, macro_average, write_reports_csv, EvalRows, ReportMeta, Scope,
    TargetingReport, NA, REPORT_HEADER,
};
