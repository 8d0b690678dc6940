//! Network specs for the six families, the instantiated [`Model`] and its
//! forward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{ParamStore, RunningStats, Tape, Var};
use crate::ops::BatchStats;
use crate::tensor::{Dims, Real, Tensor4};

use super::compiled::{Builder, CompiledBlock, ConvBnLayer, LinearLayer};
use super::params::BlockParams;
use super::{BlockKind, BlockSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Vgg,
    Xception,
    Resnet,
    Resnext,
    SeResnet,
    SeResnext,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Vgg,
        Family::Xception,
        Family::Resnet,
        Family::Resnext,
        Family::SeResnet,
        Family::SeResnext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Vgg => "vgg",
            Family::Xception => "xception",
            Family::Resnet => "resnet",
            Family::Resnext => "resnext",
            Family::SeResnet => "se_resnet",
            Family::SeResnext => "se_resnext",
        }
    }

    /// Display label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Family::Vgg => "VGG",
            Family::Xception => "Xception",
            Family::Resnet => "ResNet",
            Family::Resnext => "ResNeXt",
            Family::SeResnet => "SE-ResNet",
            Family::SeResnext => "SE-ResNeXt",
        }
    }

    pub fn has_se(self) -> bool {
        matches!(self, Family::SeResnet | Family::SeResnext)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown network family {s:?}; expected one of vgg, xception, resnet, resnext, se_resnet, se_resnext"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub depth_multiplier: f64,
    pub width_multiplier: f64,
}

impl Default for Scale {
    fn default() -> Self {
        Scale {
            depth_multiplier: 1.0,
            width_multiplier: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyOptions {
    /// Groups of the ResNeXt 3x3 convolution.
    pub cardinality: usize,
    /// ResNeXt bottleneck width relative to the ResNet one.
    pub resnext_width_factor: usize,
    /// Requested SE reduction ratio; see [`effective_se_reduction`].
    pub se_reduction: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            cardinality: 4,
            resnext_width_factor: 2,
            se_reduction: 16,
        }
    }
}

/// Everything [`build_network`] depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub family: Family,
    pub scale: Scale,
    pub options: FamilyOptions,
    pub input_size: usize,
    pub logits: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(family: Family, input_size: usize, seed: u64) -> Self {
        NetworkConfig {
            family,
            scale: Scale::default(),
            options: FamilyOptions::default(),
            input_size,
            logits: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth multiplier", self.scale.depth_multiplier),
            ("width multiplier", self.scale.width_multiplier),
        ] {
            if !(v.is_finite() && v >= 0.125) {
                return Err(Error::Config(format!("{name} must be >= 1/8, got {v}")));
            }
        }
        if !matches!(self.logits, 1 | 2) {
            return Err(Error::Config(format!("logits must be 1 or 2, got {}", self.logits)));
        }
        if self.input_size < 8 {
            return Err(Error::Config(format!("input size must be >= 8, got {}", self.input_size)));
        }
        if self.options.cardinality == 0 || self.options.resnext_width_factor == 0 || self.options.se_reduction == 0 {
            return Err(Error::Config("cardinality, width factor and SE reduction must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    /// Always global average pooling.
    pub pooling: String,
    pub features: usize,
    pub logits: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    pub input_size: usize,
    pub stem: StemSpec,
    pub stages: Vec<BlockSpec>,
    pub head: HeadSpec,
}

const STEM_CHANNELS: usize = 16;
const STAGE_CHANNELS: [usize; 2] = [32, 64];
const STAGE_STRIDES: [usize; 2] = [1, 2];
const BLOCKS_PER_STAGE: f64 = 2.0;

/// Largest divisor of `channels` not exceeding `requested`, so the SE hidden
/// width `channels / r` is always an integer.
pub fn effective_se_reduction(channels: usize, requested: usize) -> usize {
    (1..=requested.min(channels)).rev().find(|r| channels % r == 0).unwrap_or(1)
}

fn scaled_channels(base: usize, multiplier: f64) -> usize {
    let v = (base as f64 * multiplier / 4.0).round() as usize * 4;
    v.max(4)
}

impl NetworkSpec {
    /// Reduced-scale layout: a stride-2 3x3 stem, then two stages whose first
    /// blocks use strides 1 and 2, so the final feature map is a quarter of
    /// the input side.
    pub fn from_config(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let wm = cfg.scale.width_multiplier;
        let per_stage = ((BLOCKS_PER_STAGE * cfg.scale.depth_multiplier).round() as usize).max(1);
        let stem_out = scaled_channels(STEM_CHANNELS, wm);
        let o = cfg.options;
        let mut stages = Vec::new();
        let mut c_in = stem_out;
        for (&base, &first_stride) in STAGE_CHANNELS.iter().zip(&STAGE_STRIDES) {
            let c_out = scaled_channels(base, wm);
            for b in 0..per_stage {
                let stride = if b == 0 { first_stride } else { 1 };
                let bottleneck = c_out / 2;
                let (kind, width) = match cfg.family {
                    Family::Vgg => (BlockKind::PlainConv, c_out),
                    Family::Xception => (BlockKind::DepthwiseSeparable, c_out),
                    Family::Resnet | Family::SeResnet => (BlockKind::ResidualBottleneck, bottleneck),
                    Family::Resnext | Family::SeResnext => (
                        BlockKind::ResnextBottleneck {
                            cardinality: o.cardinality,
                        },
                        bottleneck * o.resnext_width_factor,
                    ),
                };
                let kind = if cfg.family.has_se() {
                    BlockKind::SeWrapper {
                        inner: Box::new(kind),
                        reduction: effective_se_reduction(c_out, o.se_reduction),
                    }
                } else {
                    kind
                };
                stages.push(BlockSpec::new(kind, c_in, c_out, stride, width)?);
                c_in = c_out;
            }
        }
        let spec = NetworkSpec {
            family: cfg.family,
            input_size: cfg.input_size,
            stem: StemSpec {
                channels_in: 1,
                channels_out: stem_out,
                kernel: 3,
                stride: 2,
            },
            stages,
            head: HeadSpec {
                pooling: "gap".into(),
                features: c_in,
                logits: cfg.logits,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut c = self.stem.channels_out;
        for (i, b) in self.stages.iter().enumerate() {
            b.validate()?;
            if b.channels_in != c {
                return Err(Error::Config(format!(
                    "block {i} expects {} input channels but receives {c}",
                    b.channels_in
                )));
            }
            c = b.channels_out;
        }
        if self.head.features != c {
            return Err(Error::Config(format!(
                "head expects {} features but the last stage produces {c}",
                self.head.features
            )));
        }
        if !matches!(self.head.logits, 1 | 2) {
            return Err(Error::Config(format!("logits must be 1 or 2, got {}", self.head.logits)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).into()
    }

    /// Spatial side of the final feature maps.
    pub fn feature_size(&self) -> usize {
        let down = |v: usize, s: usize| (v - 1) / s + 1;
        self.stages
            .iter()
            .fold(down(self.input_size, self.stem.stride), |v, b| down(v, b.stride))
    }
}

pub struct Model {
    spec: NetworkSpec,
    seed: u64,
    params: ParamStore,
    running: Vec<RunningStats>,
    stem: ConvBnLayer,
    blocks: Vec<CompiledBlock>,
    head: LinearLayer,
}

/// Deterministic in (family, scale, options, input size, logits, seed).
pub fn build_network(cfg: &NetworkConfig) -> Result<Model> {
    let spec = NetworkSpec::from_config(cfg)?;
    Model::from_spec(spec, cfg.seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// (n, logits, 1, 1).
    pub logits: Tensor4,
    /// Post-activation output of the final block, before pooling.
    pub features: Tensor4,
}

/// A recorded forward pass that can be differentiated.
pub struct ForwardPass<'a> {
    tape: Tape<'a>,
    logits: Var,
    features: Var,
}

impl ForwardPass<'_> {
    pub fn logits(&self) -> &Tensor4 {
        self.tape.value(self.logits)
    }

    pub fn features(&self) -> &Tensor4 {
        self.tape.value(self.features)
    }

    pub fn relu_pattern(&self) -> Vec<bool> {
        self.tape.relu_pattern()
    }

    /// Parameter gradients given d(loss)/d(logits), aligned with
    /// [`Model::params`].
    pub fn backward(&self, d_logits: Tensor4) -> Result<Vec<Tensor4>> {
        self.tape.backward(self.logits, d_logits)
    }

    /// Batch statistics observed by each training-mode batch-norm layer, keyed
    /// by running-stat index.
    pub fn into_bn_updates(self) -> Vec<(usize, BatchStats)> {
        self.tape.into_bn_updates()
    }
}

impl Model {
    pub fn from_spec(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut running = Vec::new();
        let mut b = Builder {
            store: &mut params,
            running: &mut running,
            seed,
        };
        let st = &spec.stem;
        let stem = b.conv_bn("stem", st.channels_in, st.channels_out, st.kernel, st.stride, 1)?;
        let blocks = spec
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| b.block(&format!("blocks.{i}"), s))
            .collect::<Result<Vec<_>>>()?;
        let head = b.linear("head", spec.head.features, spec.head.logits, 1.0)?;
        Ok(Model {
            spec,
            seed,
            params,
            running,
            stem,
            blocks,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    /// Name of the layer whose output feeds global average pooling.
    pub fn feature_layer(&self) -> String {
        format!("blocks.{}", self.blocks.len() - 1)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().iter().all(Tensor4::is_finite)
    }

    /// Explicit parameter record of block `i`.
    pub fn block_params(&self, i: usize) -> BlockParams {
        self.blocks[i].extract(&self.params, &self.running)
    }

    /// Class-`c` weights `w_k^c` and bias of the linear head. Under a
    /// single-logit head class 1 uses the logit's weights and class 0 their
    /// negation.
    pub fn class_weights(&self, class: usize) -> Result<(Vec<Real>, Real)> {
        let w = self.params.get(self.head.weight);
        let b = self.params.get(self.head.bias).data();
        let k = self.spec.head.features;
        match (self.spec.head.logits, class) {
            (1, 1) => Ok((w.data().to_vec(), b[0])),
            (1, 0) => Ok((w.data().iter().map(|v| -v).collect(), -b[0])),
            (2, c @ (0 | 1)) => Ok((w.data()[c * k..(c + 1) * k].to_vec(), b[c])),
            _ => Err(Error::Validation(format!("class index must be 0 or 1, got {class}"))),
        }
    }

    /// Records a forward pass. Training mode normalizes with batch statistics;
    /// the running statistics are left untouched until [`Model::absorb`].
    pub fn forward_tape(&self, batch: Tensor4, training: bool) -> Result<ForwardPass<'_>> {
        let s = self.spec.input_size;
        let d = batch.dims();
        if d.c() != 1 || d.h() != s || d.w() != s {
            return Err(Error::shape("forward", format!("Nx1x{s}x{s}"), d));
        }
        let mut tape = Tape::new(&self.params, &self.running, training);
        let x = tape.input(batch);
        let h = self.stem.record(&mut tape, x)?;
        let mut h = tape.relu(h);
        for block in &self.blocks {
            h = block.record(&mut tape, h)?;
        }
        let features = h;
        let pooled = tape.gap(features);
        let logits = self.head.record(&mut tape, pooled)?;
        Ok(ForwardPass { tape, logits, features })
    }

    pub fn forward(&self, batch: &Tensor4, training: bool) -> Result<ForwardOutput> {
        let pass = self.forward_tape(batch.clone(), training)?;
        Ok(ForwardOutput {
            logits: pass.logits().clone(),
            features: pass.features().clone(),
        })
    }

    /// Folds batch statistics into the running estimates.
    pub fn absorb(&mut self, updates: &[(usize, BatchStats)]) {
        for (i, stats) in updates {
            self.running[*i].absorb(stats);
        }
    }

    /// Positive-class probability per sample: `sigmoid(z)` for one logit,
    /// `sigmoid(z1 - z0)` for two.
    pub fn positive_probability(&self, logits: &Tensor4) -> Vec<Real> {
        positive_margin(logits, self.spec.head.logits)
            .into_iter()
            .map(crate::ops::sigmoid_scalar)
            .collect()
    }

    pub fn predict(&self, batch: &Tensor4) -> Result<Vec<Real>> {
        let out = self.forward(batch, false)?;
        Ok(self.positive_probability(&out.logits))
    }

    /// Overwrites parameters and running statistics from named tensors.
    /// Every name of the model must be present with matching dims.
    pub fn assign(&mut self, records: &[(String, Tensor4)]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &Tensor4> =
            records.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fetch = |name: &str, dims: Dims| -> Result<Tensor4> {
            let t = lookup
                .get(name)
                .ok_or_else(|| Error::Validation(format!("weight record {name} missing")))?;
            if t.dims() != dims {
                return Err(Error::shape("weight import", format!("{name} with dims {dims}"), t.dims()));
            }
            Ok((*t).clone())
        };
        let mut values = Vec::with_capacity(self.params.len());
        for (name, v) in self.params.iter() {
            values.push(fetch(name, v.dims())?);
        }
        let mut stats = Vec::with_capacity(self.running.len());
        for rs in &self.running {
            let dims = Dims::new(1, rs.mean.len(), 1, 1);
            let mean = fetch(&format!("{}.running_mean", rs.name), dims)?;
            let var = fetch(&format!("{}.running_var", rs.name), dims)?;
            if var.data().iter().any(|v| *v < 0.0) {
                return Err(Error::Validation(format!("{}.running_var has negative entries", rs.name)));
            }
            stats.push((mean.into_data(), var.into_data()));
        }
        for (slot, v) in self.params.values_mut().iter_mut().zip(values) {
            *slot = v;
        }
        for (rs, (m, v)) in self.running.iter_mut().zip(stats) {
            rs.mean = m;
            rs.var = v;
        }
        Ok(())
    }

    /// Parameters followed by running statistics, as named tensors.
    pub fn records(&self) -> Vec<(String, Tensor4)> {
        let mut out: Vec<(String, Tensor4)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        for rs in &self.running {
            out.push((format!("{}.running_mean", rs.name), Tensor4::vector(rs.mean.clone())));
            out.push((format!("{}.running_var", rs.name), Tensor4::vector(rs.var.clone())));
        }
        out
    }
}

/// Logit margin in favour of the positive class.
pub(crate) fn positive_margin(logits: &Tensor4, count: usize) -> Vec<Real> {
    let d = logits.data();
    if count == 1 {
        d.to_vec()
    } else {
        d.chunks(2).map(|z| z[1] - z[0]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert_eq!("SE-ResNeXt".parse::<Family>().unwrap(), Family::SeResnext);
        assert!("inception".parse::<Family>().is_err());
    }

    #[test]
    fn se_reduction_is_a_divisor() {
        assert_eq!(effective_se_reduction(64, 16), 16);
        assert_eq!(effective_se_reduction(12, 16), 12);
        assert_eq!(effective_se_reduction(20, 16), 10);
        assert_eq!(effective_se_reduction(7, 4), 1);
    }

    #[test]
    fn default_layout() {
        let spec = NetworkSpec::from_config(&NetworkConfig::new(Family::SeResnext, 64, 0)).unwrap();
        assert_eq!(spec.stem.channels_out, 16);
        assert_eq!(spec.stages.len(), 4);
        assert_eq!(spec.head.features, 64);
        assert_eq!(spec.feature_size(), 16);
    }

    #[test]
    fn multipliers_below_an_eighth_rejected() {
        let mut cfg = NetworkConfig::new(Family::Resnet, 32, 0);
        cfg.scale.width_multiplier = 0.1;
        assert!(matches!(build_network(&cfg), Err(Error::Config(_))));
    }
}
