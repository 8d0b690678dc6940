//! ADAM with a step learning-rate schedule and binary cross-entropy.
//!
//! Recipe defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`, initial rate
//! `1e-3` divided by ten every 30 epochs, 120 epochs, batches of 32.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::Model;
use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::tensor::{Dims, Grid, Real, Tensor4};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: Real = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr0: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr0: 1e-3,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "ADAM betas must satisfy 0 < beta1 < beta2 < 1, got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0 && self.lr0 > 0.0) {
            return Err(Error::Config("ADAM eps and lr0 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub step_epochs: usize,
    pub decay_factor: f64,
    pub total_epochs: usize,
    pub batch_size: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            step_epochs: 30,
            decay_factor: 0.1,
            total_epochs: 120,
            batch_size: 32,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.batch_size == 0 || self.step_epochs == 0 {
            return Err(Error::Config("epochs, step epochs and batch size must be >= 1".into()));
        }
        if !(0.0 < self.decay_factor && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub schedule: ScheduleConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.schedule.validate()
    }
}

/// `lr0 * decay^floor(epoch / step_epochs)`.
///
/// Evaluated as `lr0 / (1/decay)^k` so that a decay of 0.1 lands exactly on
/// 1e-4, 1e-5 and 1e-6.
pub fn lr_at(epoch: usize, lr0: f64, s: &ScheduleConfig) -> Result<f64> {
    if epoch >= s.total_epochs {
        return Err(Error::Validation(format!(
            "epoch {epoch} outside 0..{}",
            s.total_epochs
        )));
    }
    let k = (epoch / s.step_epochs) as i32;
    Ok(lr0 / (1.0 / s.decay_factor).powi(k))
}

/// Mean binary cross-entropy and its gradient with respect to each
/// probability. The gradient is that of the clamped loss, so it is zero where
/// the clamp is active.
pub fn bce_loss(probability: &[Real], label: &[Real]) -> Result<(Real, Vec<Real>)> {
    if probability.len() != label.len() || probability.is_empty() {
        return Err(Error::shape(
            "bce_loss",
            format!("{} labels", probability.len()),
            format!("{} labels", label.len()),
        ));
    }
    let n = probability.len() as Real;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probability.len());
    for (i, (&p, &y)) in probability.iter().zip(label).enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Validation(format!("label {i} is {y}, expected 0 or 1")));
        }
        let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        let inside = (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p);
        grad.push(if inside { (-y / q + (1.0 - y) / (1.0 - q)) / n } else { 0.0 });
    }
    Ok((loss / n, grad))
}

/// ADAM first and second moments, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor4>,
    pub v: Vec<Tensor4>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor4> = params.values().iter().map(|p| Tensor4::zeros(p.dims())).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update; increments `state.t`.
pub fn adam_step(
    params: &mut [Tensor4],
    grads: &[Tensor4],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    lr: Real,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} gradient and moment tensors", params.len()),
            format!("{} gradients, {} moments", grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if g.dims() != p.dims() || m.dims() != p.dims() {
            return Err(Error::shape("adam_step", p.dims(), g.dims()));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (cfg.beta1 as Real, cfg.beta2 as Real, cfg.eps as Real);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut());
        for (((p, &g), m), v) in iter {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Labeled single-channel images already at the model's input size.
#[derive(Clone, Copy, Debug)]
pub struct LabeledImages<'a> {
    pub images: &'a [Grid<Real>],
    pub labels: &'a [u8],
}

impl LabeledImages<'_> {
    /// `(n, 1, h, w)` batch of the images at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor4> {
        let first = self
            .images
            .get(*indices.first().ok_or_else(|| Error::Validation("empty batch".into()))?)
            .ok_or_else(|| Error::Validation("batch index out of range".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &i in indices {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::Validation(format!("sample index {i} out of range")))?;
            if img.dims() != (h, w) {
                return Err(Error::shape("batch", format!("{h}x{w} image"), format!("{}x{}", img.height(), img.width())));
            }
            data.extend_from_slice(img.data());
        }
        Tensor4::new(Dims::new(indices.len(), 1, h, w), data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Optimizer steps taken this epoch.
    pub batches: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: serde_json::Value,
    pub init: String,
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<serde_json::Value>,
}

pub const INIT_DESCRIPTION: &str = "per-parameter ChaCha8 stream keyed by SHA-256(seed, name); \
conv and SE squeeze weights N(0, 2/fan_in), SE excite and head weights N(0, 1/fan_in); \
biases 0, batch-norm gamma 1, beta 0";

/// d(loss)/d(logits) given d(loss)/d(probability).
fn logit_gradient(model: &Model, logits: &Tensor4, d_prob: &[Real]) -> Tensor4 {
    let prob = model.positive_probability(logits);
    let mut out = Tensor4::zeros(logits.dims());
    let k = model.spec().head.logits;
    for (i, (p, dp)) in prob.iter().zip(d_prob).enumerate() {
        let dz = dp * p * (1.0 - p);
        if k == 1 {
            out.data_mut()[i] = dz;
        } else {
            out.data_mut()[2 * i] = -dz;
            out.data_mut()[2 * i + 1] = dz;
        }
    }
    out
}

/// Mean loss and parameter gradients of one batch in training mode; batch
/// norm statistics are returned for the caller to absorb.
pub fn batch_gradients(
    model: &Model,
    batch: Tensor4,
    labels: &[Real],
) -> Result<(Real, Vec<Tensor4>, Vec<(usize, crate::ops::BatchStats)>)> {
    let pass = model.forward_tape(batch, true)?;
    let prob = model.positive_probability(pass.logits());
    let (loss, d_prob) = bce_loss(&prob, labels)?;
    let d_logits = logit_gradient(model, pass.logits(), &d_prob);
    let grads = pass.backward(d_logits)?;
    Ok((loss, grads, pass.into_bn_updates()))
}

/// Trains `model` in place on the samples at `indices`.
///
/// Each epoch visits a fresh permutation drawn from a ChaCha8 generator
/// seeded with `seed` on stream `epoch`; the final short batch is kept.
pub fn train(
    model: &mut Model,
    data: LabeledImages<'_>,
    indices: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<RunManifest> {
    cfg.validate()?;
    let labels_of = |ix: &[usize]| -> Vec<Real> { ix.iter().map(|&i| Real::from(data.labels[i])).collect() };
    if indices.iter().any(|&i| i >= data.labels.len() || i >= data.images.len()) {
        return Err(Error::Validation("training index out of range".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| data.labels[i] > 1) {
        return Err(Error::Validation(format!("sample {bad} has label {}, expected 0 or 1", data.labels[bad])));
    }
    let positives = indices.iter().filter(|&&i| data.labels[i] == 1).count();
    if positives == 0 || positives == indices.len() {
        return Err(Error::Validation(
            "training split must contain both classes".into(),
        ));
    }

    let start = Instant::now();
    let mut state = OptimizerState::new(model.params());
    let mut epochs = Vec::with_capacity(cfg.schedule.total_epochs);
    let mut order = indices.to_vec();
    for epoch in 0..cfg.schedule.total_epochs {
        let lr = lr_at(epoch, cfg.adam.lr0, &cfg.schedule)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.copy_from_slice(indices);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.schedule.batch_size).enumerate() {
            let batch = data.batch(chunk)?;
            let (loss, grads, bn) = batch_gradients(model, batch, &labels_of(chunk))?;
            if !loss.is_finite() || !grads.iter().all(Tensor4::is_finite) {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {b}"
                )));
            }
            model.absorb(&bn);
            adam_step(model.params_mut().values_mut(), &grads, &mut state, &cfg.adam, lr as Real)?;
            loss_sum += loss * chunk.len() as Real;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            lr,
            batches,
            mean_loss: (loss_sum / indices.len() as Real) as f64,
        };
        progress(&record);
        epochs.push(record);
    }
    if !model.is_finite() {
        return Err(Error::Numerical("parameters became non-finite during training".into()));
    }
    Ok(RunManifest {
        seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        init: INIT_DESCRIPTION.into(),
        epochs,
        wall_seconds: start.elapsed().as_secs_f64(),
        final_metrics: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_schedule() {
        let s = ScheduleConfig::default();
        let lr = |e| lr_at(e, 1e-3, &s).unwrap();
        assert_eq!(lr(0), 1e-3);
        assert_eq!(lr(29), 1e-3);
        assert_eq!(lr(30), 1e-4);
        assert_eq!(lr(60), 1e-5);
        assert_eq!(lr(90), 1e-6);
        assert_eq!(lr(119), 1e-6);
        assert!(lr_at(120, 1e-3, &s).is_err());
    }

    #[test]
    fn bce_at_one_half() {
        let (l, g) = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2 as Real).abs() < 1e-12);
        assert!((g[0] + 2.0).abs() < 1e-12);
        assert!(matches!(bce_loss(&[0.5], &[2.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn first_adam_step_closed_form() {
        let mut p = vec![Tensor4::vector(vec![1.0])];
        let g = vec![Tensor4::vector(vec![2.0])];
        let mut st = OptimizerState {
            m: vec![Tensor4::vector(vec![0.0])],
            v: vec![Tensor4::vector(vec![0.0])],
            t: 0,
        };
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), 1e-3).unwrap();
        assert!((st.m[0].data()[0] - 0.2).abs() < 1e-12);
        assert!((st.v[0].data()[0] - 0.004).abs() < 1e-12);
        let delta = 1.0 - p[0].data()[0];
        assert!((delta - 1e-3 * 2.0 / (2.0 + 1e-8)).abs() < 1e-12);
        assert_eq!(st.t, 1);
    }
}
