use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Decision threshold; a score equal to it counts as positive.
pub const THRESHOLD: Real = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.r#fn + self.tn
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            r#fn: self.r#fn + other.r#fn,
            tn: self.tn + other.tn,
        }
    }
}

pub(crate) fn check_scores(scores: &[Real], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Validation("no scores to evaluate".into()));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Validation(format!("label {i} is {}, expected 0 or 1", labels[i])));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!("score {i} is not finite")));
    }
    Ok(())
}

/// Predicts positive iff `score >= threshold`.
pub fn confusion(scores: &[Real], labels: &[u8], threshold: Real) -> Result<ConfusionCounts> {
    check_scores(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.r#fn += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Percentages; `None` marks a metric whose formula is 0/0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    /// In `[0, 1]`.
    pub auprc: Option<f64>,
}

/// Row labels and accessors in report order.
pub const METRIC_ROWS: [(&str, fn(&MetricsRecord) -> Option<f64>); 6] = [
    ("Accuracy", |m| m.accuracy),
    ("F1 score", |m| m.f1),
    ("Sensitivity", |m| m.sensitivity),
    ("Specificity", |m| m.specificity),
    ("Precision (PPV)", |m| m.ppv),
    ("NPV", |m| m.npv),
];

pub(crate) fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// The six threshold metrics of a confusion table; `auprc` is left unset.
pub fn metrics_from_confusion(c: &ConfusionCounts) -> Result<MetricsRecord> {
    if c.total() == 0 {
        return Err(Error::Validation("confusion table is empty".into()));
    }
    let sensitivity = percent(c.tp, c.tp + c.r#fn);
    let ppv = percent(c.tp, c.tp + c.fp);
    let f1 = match (ppv, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    Ok(MetricsRecord {
        accuracy: percent(c.tp + c.tn, c.total()),
        f1,
        sensitivity,
        specificity: percent(c.tn, c.tn + c.fp),
        ppv,
        npv: percent(c.tn, c.tn + c.r#fn),
        auprc: None,
    })
}

/// Per-metric mean over records, skipping undefined entries. Returns the
/// mean and, per metric in [`METRIC_ROWS`] order followed by AUPRC, how many
/// records were skipped.
pub fn mean_metrics(records: &[MetricsRecord]) -> (MetricsRecord, [usize; 7]) {
    let mean = |get: &dyn Fn(&MetricsRecord) -> Option<f64>| -> (Option<f64>, usize) {
        let vals: Vec<f64> = records.iter().filter_map(get).collect();
        let skipped = records.len() - vals.len();
        let m = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        (m, skipped)
    };
    let mut skipped = [0usize; 7];
    let mut out = MetricsRecord::default();
    let slots: [&mut Option<f64>; 7] = [
        &mut out.accuracy,
        &mut out.f1,
        &mut out.sensitivity,
        &mut out.specificity,
        &mut out.ppv,
        &mut out.npv,
        &mut out.auprc,
    ];
    for (i, slot) in slots.into_iter().enumerate() {
        let (m, s) = if i < 6 {
            mean(&METRIC_ROWS[i].1)
        } else {
            mean(&|r: &MetricsRecord| r.auprc)
        };
        *slot = m;
        skipped[i] = s;
    }
    (out, skipped)
}
