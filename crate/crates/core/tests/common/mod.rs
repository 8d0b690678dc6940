//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcam_core::blocks::Model;
use xcam_core::training::{batch_gradients, bce_loss};
use xcam_core::{Dims, Real, Tensor4};

pub type Q = Ratio<i128>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, dims: Dims, lo: Real, hi: Real) -> Tensor4 {
    let data = (0..dims.len()).map(|_| r.random_range(lo..hi)).collect();
    Tensor4::new(dims, data).unwrap()
}

/// Per-sample recount of the confusion table at a threshold.
pub fn recount(scores: &[Real], labels: &[u8], threshold: Real) -> [usize; 4] {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for i in 0..scores.len() {
        let predicted = scores[i] >= threshold;
        let actual = labels[i] == 1;
        if predicted && actual {
            tp += 1;
        } else if predicted {
            fp += 1;
        } else if actual {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    [tp, fp, fn_, tn]
}

fn q_percent(num: usize, den: usize) -> Option<Q> {
    (den > 0).then(|| Q::new(100 * num as i128, den as i128))
}

/// Exact metrics in report order: accuracy, F1, sensitivity, specificity,
/// PPV, NPV. F1 uses the count form `2tp / (2tp + fp + fn)`.
pub fn rational_metrics(c: [usize; 4]) -> [Option<Q>; 6] {
    let [tp, fp, fn_, tn] = c;
    let f1 = if tp == 0 {
        None
    } else {
        q_percent(2 * tp, 2 * tp + fp + fn_)
    };
    [
        q_percent(tp + tn, tp + fp + fn_ + tn),
        f1,
        q_percent(tp, tp + fn_),
        q_percent(tn, tn + fp),
        q_percent(tp, tp + fp),
        q_percent(tn, tn + fn_),
    ]
}

pub fn q_to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Distinct scores, highest first.
fn thresholds(scores: &[Real]) -> Vec<Real> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// Step-interpolated area from a full recount at every distinct threshold,
/// in f64 with the same term order as the definition.
pub fn auprc_recount(scores: &[Real], labels: &[u8]) -> f64 {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let mut area = 0.0;
    let mut prev_tp = 0;
    for t in thresholds(scores) {
        let [tp, fp, _, _] = recount(scores, labels, t);
        area += ((tp - prev_tp) as f64 / positives as f64) * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    area
}

/// The same area in exact rational arithmetic.
pub fn auprc_rational(scores: &[Real], labels: &[u8]) -> Q {
    let positives = labels.iter().filter(|&&l| l == 1).count() as i128;
    let mut area = Q::from_integer(0);
    let mut prev_tp = 0i128;
    for t in thresholds(scores) {
        let [tp, fp, _, _] = recount(scores, labels, t);
        let (tp, fp) = (tp as i128, fp as i128);
        area += Q::new(tp - prev_tp, positives) * Q::new(tp, tp + fp);
        prev_tp = tp;
    }
    area
}

pub fn training_loss(model: &Model, x: &Tensor4, y: &[Real]) -> Real {
    let pass = model.forward_tape(x.clone(), true).unwrap();
    let p = model.positive_probability(pass.logits());
    bce_loss(&p, y).unwrap().0
}

/// Denominator floor of the relative error, so gradients that vanish up to
/// round-off compare on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

pub struct GradReport {
    pub checked: usize,
    pub max_error: f64,
    pub worst: String,
    /// Entries whose `+h` and `-h` evaluations fell in different ReLU regions
    /// and were re-checked with a smaller step.
    pub reduced_step: usize,
}

/// Moves batch-norm affine parameters and biases off their init values.
/// At init with one sample, training-mode batch norm outputs have zero
/// spatial mean, so every SE squeeze input is exactly zero and its ReLUs sit
/// on their kinks.
pub fn generic_point(model: &mut Model, seed: u64) {
    let mut r = rng(seed);
    let names: Vec<String> = model.params().names().iter().map(|n| n.to_string()).collect();
    for (name, t) in names.iter().zip(model.params_mut().values_mut()) {
        let (lo, hi) = if name.ends_with("gamma") {
            (0.5, 1.5)
        } else if name.ends_with("beta") || name.ends_with("bias") {
            (-0.5, 0.5)
        } else {
            continue;
        };
        for v in t.data_mut() {
            *v = r.random_range(lo..hi);
        }
    }
}

fn probe(model: &Model, x: &Tensor4, y: &[Real]) -> (Real, Vec<bool>) {
    let pass = model.forward_tape(x.clone(), true).unwrap();
    let p = model.positive_probability(pass.logits());
    (bce_loss(&p, y).unwrap().0, pass.relu_pattern())
}

/// Central differences against the analytic gradient for every scalar
/// parameter, batch statistics in training mode. The step is `h` unless the
/// two evaluations straddle a ReLU kink, where the loss has no derivative to
/// approximate; the step is then divided by 10 until they do not (down to
/// `h * 1e-4`).
pub fn gradient_check(model: &mut Model, x: &Tensor4, y: &[Real], h: Real) -> GradReport {
    let (_, grads, _) = batch_gradients(model, x.clone(), y).unwrap();
    let mut report = GradReport {
        checked: 0,
        max_error: 0.0,
        worst: String::new(),
        reduced_step: 0,
    };
    for p in 0..grads.len() {
        for j in 0..grads[p].len() {
            let orig = model.params().values()[p].data()[j];
            let mut step = h;
            let numeric = loop {
                model.params_mut().values_mut()[p].data_mut()[j] = orig + step;
                let (up, up_pattern) = probe(model, x, y);
                model.params_mut().values_mut()[p].data_mut()[j] = orig - step;
                let (down, down_pattern) = probe(model, x, y);
                model.params_mut().values_mut()[p].data_mut()[j] = orig;
                if up_pattern == down_pattern || step <= h * 1e-4 {
                    break (up - down) / (2.0 * step);
                }
                step /= 10.0;
            };
            report.reduced_step += usize::from(step < h);
            let err = relative_error(grads[p].data()[j] as f64, numeric as f64);
            report.checked += 1;
            if err > report.max_error {
                report.max_error = err;
                report.worst = format!("{}[{j}]", model.params().names()[p]);
            }
        }
    }
    report
}
