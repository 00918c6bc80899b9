//! Scenario runs, metrics and report files.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::model::ModelError;
use crate::tensor::TensorError;

pub use metrics::{aggregate, compute_metrics, mean_std, Aggregate, ConfusionCounts, Metric, MetricSet, MetricValue, Summary};
pub use report::{
    csv_rows, emit_report, metric_row, parse_csv, round2, to_csv, to_json, to_markdown, CsvRow, FoldResult,
    ReportFormat, RunFingerprint, ScenarioReport,
};
pub use runner::{evaluate_samples, run_scenario, ExperimentConfig, ExperimentSession, FrameCache};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("evaluation on zero samples")]
    EmptyEvaluation,
    #[error("fold {fold_id}: {source}")]
    Fold { fold_id: usize, source: Box<ExperimentError> },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("report error: {0}")]
    Report(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}
