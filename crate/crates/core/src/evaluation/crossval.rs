use rayon::prelude::*;
use serde_json::{json, Value};

use crate::blocks::{build_network, Model, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::training::{train, EpochRecord, LabeledImages, RunManifest, TrainConfig};

use super::curve::{pr_curve, PrCurve};
use super::folds::{stratified_kfold, FoldPlan};
use super::metrics::{confusion, mean_metrics, metrics_from_confusion, ConfusionCounts, MetricsRecord, METRIC_ROWS, THRESHOLD};
use super::report::render_report;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrossValConfig {
    pub k: usize,
    pub seed: u64,
    /// Folds trained concurrently; results do not depend on it.
    pub jobs: usize,
}

pub struct FoldOutcome {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    /// Positive-class probability per held-out sample.
    pub scores: Vec<Real>,
    pub confusion: ConfusionCounts,
    pub metrics: MetricsRecord,
    pub manifest: RunManifest,
}

pub struct CrossValidation {
    pub network: String,
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub models: Vec<Model>,
    pub pooled_confusion: ConfusionCounts,
    /// Metrics of all held-out predictions pooled together.
    pub pooled: MetricsRecord,
    /// Per-fold metrics averaged over the folds where each is defined.
    pub fold_mean: MetricsRecord,
    /// Folds excluded from each mean: the report rows, then AUPRC.
    pub excluded: [usize; 7],
    pub curve: PrCurve,
}

/// Positive-class probabilities in eval mode, in batches of `batch`.
pub fn predict_indices(model: &Model, data: LabeledImages<'_>, indices: &[usize], batch: usize) -> Result<Vec<Real>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        out.extend(model.predict(&data.batch(chunk)?)?);
    }
    Ok(out)
}

fn evaluate(scores: &[Real], labels: &[u8]) -> Result<(ConfusionCounts, MetricsRecord)> {
    let c = confusion(scores, labels, THRESHOLD)?;
    let mut m = metrics_from_confusion(&c)?;
    if labels.contains(&1) {
        m.auprc = Some(pr_curve(scores, labels)?.auprc);
    }
    Ok((c, m))
}

/// Trains one model per fold on the remaining folds and scores the held-out
/// fold. Every fold model starts from the initialization of `net.seed`; fold
/// `f` shuffles with seed `cv.seed + f`.
pub fn cross_validate(
    data: LabeledImages<'_>,
    net: &NetworkConfig,
    train_cfg: &TrainConfig,
    cv: &CrossValConfig,
    progress: &(dyn Fn(usize, &EpochRecord) + Sync),
) -> Result<CrossValidation> {
    train_cfg.validate()?;
    net.validate()?;
    if data.images.len() != data.labels.len() {
        return Err(Error::Validation(format!(
            "{} images but {} labels",
            data.images.len(),
            data.labels.len()
        )));
    }
    let plan = stratified_kfold(data.labels, cv.k, cv.seed)?;
    let run_fold = |f: usize| -> Result<(FoldOutcome, Model)> {
        let mut model = build_network(net)?;
        let train_idx = plan.train_indices(f);
        let manifest = train(&mut model, data, &train_idx, train_cfg, cv.seed.wrapping_add(f as u64), |r| {
            progress(f, r)
        })?;
        let test = plan.folds[f].clone();
        let scores = predict_indices(&model, data, &test, train_cfg.schedule.batch_size)?;
        let labels: Vec<u8> = test.iter().map(|&i| data.labels[i]).collect();
        let (confusion, metrics) = evaluate(&scores, &labels)?;
        Ok((
            FoldOutcome {
                fold: f,
                test_indices: test,
                scores,
                confusion,
                metrics,
                manifest,
            },
            model,
        ))
    };
    let results: Vec<Result<(FoldOutcome, Model)>> = if cv.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cv.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cv.jobs)))?;
        pool.install(|| (0..cv.k).into_par_iter().map(run_fold).collect())
    } else {
        (0..cv.k).map(run_fold).collect()
    };

    let mut folds = Vec::with_capacity(cv.k);
    let mut models = Vec::with_capacity(cv.k);
    for r in results {
        let (f, m) = r?;
        folds.push(f);
        models.push(m);
    }
    let mut all_scores = Vec::with_capacity(data.labels.len());
    let mut all_labels = Vec::with_capacity(data.labels.len());
    for f in &folds {
        all_scores.extend_from_slice(&f.scores);
        all_labels.extend(f.test_indices.iter().map(|&i| data.labels[i]));
    }
    let (pooled_confusion, pooled) = evaluate(&all_scores, &all_labels)?;
    let curve = pr_curve(&all_scores, &all_labels)?;
    let fold_records: Vec<MetricsRecord> = folds.iter().map(|f| f.metrics).collect();
    let (fold_mean, excluded) = mean_metrics(&fold_records);
    Ok(CrossValidation {
        network: net.family.label().to_string(),
        plan,
        folds,
        models,
        pooled_confusion,
        pooled,
        fold_mean,
        excluded,
        curve,
    })
}

impl CrossValidation {
    pub fn folds_json(&self) -> Value {
        Value::Array(
            self.folds
                .iter()
                .map(|f| {
                    let t = self.plan.tallies[f.fold];
                    json!({
                        "network": self.network,
                        "fold": f.fold,
                        "test_size": f.test_indices.len(),
                        "positives": t[1],
                        "negatives": t[0],
                        "confusion": f.confusion,
                        "metrics": f.metrics,
                    })
                })
                .collect(),
        )
    }

    pub fn pooled_json(&self) -> Value {
        let excluded: serde_json::Map<String, Value> = METRIC_ROWS
            .iter()
            .map(|(label, _)| *label)
            .chain(["AUPRC"])
            .zip(self.excluded)
            .map(|(l, n)| (l.to_string(), json!(n)))
            .collect();
        json!({
            "network": self.network,
            "k": self.plan.k,
            "confusion": self.pooled_confusion,
            "metrics": self.pooled,
            "fold_mean": self.fold_mean,
            "folds_excluded_from_mean": excluded,
        })
    }

    /// Pooled table, fold-mean table and footnotes for excluded folds.
    pub fn report(&self) -> String {
        let mut out = String::from("Pooled held-out predictions\n\n");
        out.push_str(&render_report(&[(self.network.clone(), self.pooled)]));
        out.push_str(&format!("\nMean over {} folds\n\n", self.plan.k));
        out.push_str(&render_report(&[(self.network.clone(), self.fold_mean)]));
        let labels = METRIC_ROWS.iter().map(|(l, _)| *l).chain(["AUPRC"]);
        for (label, n) in labels.zip(self.excluded) {
            if n > 0 {
                out.push_str(&format!(
                    "note: {n} fold(s) with undefined {label} excluded from its mean\n"
                ));
            }
        }
        out
    }
}
