use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

use super::metrics::check_scores;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: Real,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds strictly decreasing.
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

/// Precision-recall curve over every distinct score used as a threshold,
/// highest first. Tied scores share one threshold. The area uses step
/// interpolation, `sum_i (R_i - R_{i-1}) P_i` with `R_0 = 0`, where each term is
/// evaluated as `((tp_i - tp_{i-1}) / P) * (tp_i / (tp_i + fp_i))`.
pub fn pr_curve(scores: &[Real], labels: &[u8]) -> Result<PrCurve> {
    check_scores(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::Validation("precision-recall curve needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let mut auprc = 0.0;
    let (mut tp, mut fp, mut prev_tp) = (0usize, 0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += ((tp - prev_tp) as f64 / positives as f64) * precision;
        prev_tp = tp;
        points.push(PrPoint {
            threshold: t,
            recall: tp as f64 / positives as f64,
            precision,
        });
    }
    Ok(PrCurve { points, auprc })
}

impl PrCurve {
    /// `threshold,recall,precision` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "recall", "precision"]).expect("in-memory write");
        for p in &self.points {
            w.write_record([p.threshold.to_string(), p.recall.to_string(), p.precision.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(pr_curve(&[0.9, 0.1], &[1, 0]).unwrap().auprc, 1.0);
        let c = pr_curve(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap();
        assert!((c.auprc - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(c.points.len(), 4);
    }

    #[test]
    fn ties_share_a_threshold() {
        let c = pr_curve(&[0.5, 0.5, 0.2], &[1, 0, 1]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[0].precision, 0.5);
        assert!(pr_curve(&[0.3], &[0]).is_err());
    }
}
