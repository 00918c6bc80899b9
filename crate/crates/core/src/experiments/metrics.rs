//! Confusion counts, the five evaluation metrics and their aggregation.

use std::fmt::Debug;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::experiments::ExperimentError;

/// Counts with tongue-out as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Tallies binary predictions against labels (1 = positive).
    pub fn tally(predictions: &[usize], labels: &[usize]) -> Self {
        assert_eq!(predictions.len(), labels.len(), "prediction and label counts differ");
        let mut c = Self::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

/// A number type metrics can be expressed in.
pub trait MetricValue: Clone + PartialEq + Debug {
    /// `num / den`, with `den > 0`.
    fn ratio(num: u64, den: u64) -> Self;
    fn to_f64(&self) -> f64;
}

impl MetricValue for f64 {
    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl MetricValue for f32 {
    fn ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl MetricValue for Ratio<i64> {
    fn ratio(num: u64, den: u64) -> Self {
        let n = i64::try_from(num).expect("count fits i64");
        let d = i64::try_from(den).expect("count fits i64");
        Ratio::new(n, d)
    }
    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Specificity,
    Sensitivity,
    F1,
    Precision,
}

impl Metric {
    /// Report column order.
    pub const COLUMNS: [Metric; 5] = [Metric::Accuracy, Metric::Specificity, Metric::Sensitivity, Metric::F1, Metric::Precision];

    pub fn header(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::Specificity => "Specificity",
            Metric::Sensitivity => "Sensitivity",
            Metric::F1 => "F1-Score",
            Metric::Precision => "Precision",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Specificity => "specificity",
            Metric::Sensitivity => "sensitivity",
            Metric::F1 => "f1",
            Metric::Precision => "precision",
        }
    }
}

/// The five metrics; `None` marks a zero denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet<V> {
    pub accuracy: Option<V>,
    pub sensitivity: Option<V>,
    pub specificity: Option<V>,
    pub precision: Option<V>,
    pub f1: Option<V>,
}

impl<V: MetricValue> MetricSet<V> {
    pub fn get(&self, m: Metric) -> Option<&V> {
        match m {
            Metric::Accuracy => self.accuracy.as_ref(),
            Metric::Specificity => self.specificity.as_ref(),
            Metric::Sensitivity => self.sensitivity.as_ref(),
            Metric::F1 => self.f1.as_ref(),
            Metric::Precision => self.precision.as_ref(),
        }
    }

    fn slot(&mut self, m: Metric) -> &mut Option<V> {
        match m {
            Metric::Accuracy => &mut self.accuracy,
            Metric::Specificity => &mut self.specificity,
            Metric::Sensitivity => &mut self.sensitivity,
            Metric::F1 => &mut self.f1,
            Metric::Precision => &mut self.precision,
        }
    }

    pub fn empty() -> Self {
        Self { accuracy: None, sensitivity: None, specificity: None, precision: None, f1: None }
    }

    pub fn to_f64(&self) -> MetricSet<f64> {
        let mut out = MetricSet::empty();
        for m in Metric::COLUMNS {
            *out.slot(m) = self.get(m).map(V::to_f64);
        }
        out
    }
}

fn ratio_or_none<V: MetricValue>(num: u64, den: u64) -> Option<V> {
    (den > 0).then(|| V::ratio(num, den))
}

/// The five metrics of `c`. F1 is the harmonic mean of precision and
/// sensitivity, undefined when either is or when both are zero.
pub fn compute_metrics<V: MetricValue>(c: &ConfusionCounts) -> Result<MetricSet<V>, ExperimentError> {
    let total = c.total();
    if total == 0 {
        return Err(ExperimentError::EmptyEvaluation);
    }
    let precision = ratio_or_none(c.tp, c.tp + c.fp);
    let sensitivity = ratio_or_none(c.tp, c.tp + c.fn_);
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn); P+R = 0 exactly when tp = 0
    let f1 = if precision.is_some() && sensitivity.is_some() && c.tp > 0 {
        Some(V::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_))
    } else {
        None
    };
    Ok(MetricSet {
        accuracy: Some(V::ratio(c.tp + c.tn, total)),
        sensitivity,
        specificity: ratio_or_none(c.tn, c.tn + c.fp),
        precision,
        f1,
    })
}

/// Mean and sample standard deviation of one metric over folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    /// Folds where the metric was defined.
    pub n: usize,
}

/// Mean and sample std (n-1; 0 for a single value) of `values`.
pub fn mean_std(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(Summary { mean, std, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Option<Summary>,
    pub specificity: Option<Summary>,
    pub sensitivity: Option<Summary>,
    pub f1: Option<Summary>,
    pub precision: Option<Summary>,
}

impl Aggregate {
    pub fn get(&self, m: Metric) -> Option<&Summary> {
        match m {
            Metric::Accuracy => self.accuracy.as_ref(),
            Metric::Specificity => self.specificity.as_ref(),
            Metric::Sensitivity => self.sensitivity.as_ref(),
            Metric::F1 => self.f1.as_ref(),
            Metric::Precision => self.precision.as_ref(),
        }
    }
}

/// Per-metric summary over folds; undefined values are left out.
pub fn aggregate(per_fold: &[MetricSet<f64>]) -> Aggregate {
    let summarize = |m: Metric| {
        let values: Vec<f64> = per_fold.iter().filter_map(|s| s.get(m).copied()).collect();
        if values.len() < per_fold.len() {
            log::info!("{}: {} of {} folds undefined, excluded", m.key(), per_fold.len() - values.len(), per_fold.len());
        }
        mean_std(&values)
    };
    Aggregate {
        accuracy: summarize(Metric::Accuracy),
        specificity: summarize(Metric::Specificity),
        sensitivity: summarize(Metric::Sensitivity),
        f1: summarize(Metric::F1),
        precision: summarize(Metric::Precision),
    }
}
