//! Label-efficiency benchmark: stratified label fractions, Monte Carlo
//! repeats over pretraining variants and evaluation protocols, and
//! aggregation into tables and charts.

pub mod config;
pub mod render;
pub mod report;
pub mod run;
pub mod subsample;
pub mod supervised;

pub use config::{DatasetSource, ExperimentConfig, SslConfig, SupervisedConfig, TableMetric, Variant};
pub use render::{render_csv, render_svg, write_tables};
pub use report::{aggregate, summarize, CellSummary, MetricsReport, RunRecord, Summary};
pub use run::{cell_split, load_report, prepare_data, run_benchmark, CellSplit, PreparedData, RunOptions};
pub use subsample::{holdout_split, selection_units, stratified_subsample, validation_split, ValSplit};
pub use supervised::{supervised_pretrain, SupervisedOutcome};
