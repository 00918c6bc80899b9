//! Scenario reports and their markdown, CSV and JSON forms.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::dataset::Scenario;
use crate::experiments::metrics::{aggregate, Aggregate, ConfusionCounts, Metric, MetricSet, Summary};
use crate::experiments::ExperimentError;
use crate::model::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    /// The held-out participant.
    pub participant: String,
    /// Seed of this fold's training run.
    pub seed: u64,
    pub train_size: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet<f64>,
}

/// Everything that determines a run's output besides the data itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFingerprint {
    pub base_seed: u64,
    pub config: TrainConfig,
    pub misc_class: bool,
    /// CRC32 of the ordered sample lists of every fold.
    pub data_digest: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
    pub fingerprint: RunFingerprint,
}

impl ScenarioReport {
    pub fn new(scenario: Scenario, folds: Vec<FoldResult>, fingerprint: RunFingerprint) -> Self {
        let per_fold: Vec<MetricSet<f64>> = folds.iter().map(|f| f.metrics.clone()).collect();
        Self { scenario, aggregate: aggregate(&per_fold), folds, fingerprint }
    }
}

/// Half-up rounding to two decimals of the shortest decimal form of `x`.
pub fn round2(x: f64) -> String {
    match Decimal::from_str(&format!("{x}")) {
        Ok(d) => format!("{:.2}", d.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)),
        Err(_) => format!("{x:.2}"),
    }
}

fn cell(v: Option<&f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| round2(*x))
}

fn summary_cell(s: Option<&Summary>) -> String {
    s.map_or_else(|| "n/a".to_string(), |s| format!("{}±{}", round2(s.mean), round2(s.std)))
}

/// Markdown row of the five metrics in column order, e.g. `0.99 | 1.00 | 0.83 | 0.88 | 0.94`.
pub fn metric_row(m: &MetricSet<f64>) -> String {
    Metric::COLUMNS.iter().map(|&k| cell(m.get(k))).collect::<Vec<_>>().join(" | ")
}

pub fn to_markdown(report: &ScenarioReport) -> String {
    let mut out = format!("## Scenario {}", report.scenario.id());
    if report.fingerprint.misc_class {
        out.push_str(" (misc class in test)");
    }
    out.push_str("\n\n| Participant | ");
    out.push_str(&Metric::COLUMNS.iter().map(|m| m.header()).collect::<Vec<_>>().join(" | "));
    out.push_str(" |\n|---|---|---|---|---|---|\n");
    for f in &report.folds {
        out.push_str(&format!("| {} | {} |\n", f.participant, metric_row(&f.metrics)));
    }
    let agg: Vec<String> = Metric::COLUMNS.iter().map(|&m| summary_cell(report.aggregate.get(m))).collect();
    out.push_str(&format!("| Mean ± std | {} |\n", agg.join(" | ")));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub row: String,
    pub fold_id: Option<usize>,
    pub participant: String,
    pub tp: Option<u64>,
    pub fp: Option<u64>,
    pub tn: Option<u64>,
    #[serde(rename = "fn")]
    pub fn_: Option<u64>,
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
}

impl CsvRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Specificity => self.specificity,
            Metric::Sensitivity => self.sensitivity,
            Metric::F1 => self.f1,
            Metric::Precision => self.precision,
        }
    }
}

fn summary_row(name: &str, agg: &Aggregate, pick: fn(&Summary) -> f64) -> CsvRow {
    let v = |m| agg.get(m).map(pick);
    CsvRow {
        row: name.to_string(),
        fold_id: None,
        participant: String::new(),
        tp: None,
        fp: None,
        tn: None,
        fn_: None,
        accuracy: v(Metric::Accuracy),
        specificity: v(Metric::Specificity),
        sensitivity: v(Metric::Sensitivity),
        f1: v(Metric::F1),
        precision: v(Metric::Precision),
    }
}

/// One row per fold then `mean` and `std` rows, at full precision.
pub fn csv_rows(report: &ScenarioReport) -> Vec<CsvRow> {
    let mut rows: Vec<CsvRow> = report
        .folds
        .iter()
        .map(|f| CsvRow {
            row: "fold".to_string(),
            fold_id: Some(f.fold_id),
            participant: f.participant.clone(),
            tp: Some(f.counts.tp),
            fp: Some(f.counts.fp),
            tn: Some(f.counts.tn),
            fn_: Some(f.counts.fn_),
            accuracy: f.metrics.accuracy,
            specificity: f.metrics.specificity,
            sensitivity: f.metrics.sensitivity,
            f1: f.metrics.f1,
            precision: f.metrics.precision,
        })
        .collect();
    rows.push(summary_row("mean", &report.aggregate, |s| s.mean));
    rows.push(summary_row("std", &report.aggregate, |s| s.std));
    rows
}

pub fn to_csv(report: &ScenarioReport) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in csv_rows(report) {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExperimentError::Report(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, ExperimentError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(ExperimentError::from)).collect()
}

pub fn to_json(report: &ScenarioReport) -> Result<String, ExperimentError> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| ExperimentError::Report(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

pub fn emit_report(report: &ScenarioReport, format: ReportFormat, path: &Path) -> Result<(), ExperimentError> {
    let text = match format {
        ReportFormat::Markdown => to_markdown(report),
        ReportFormat::Csv => to_csv(report)?,
        ReportFormat::Json => to_json(report)?,
    };
    fs::write(path, text).map_err(|e| ExperimentError::Io { path: path.to_path_buf(), source: e })
}
