//! Block families and the network builder.
//!
//! A [`BlockSpec`] describes one block declaratively. Blocks come in four
//! kinds plus an SE wrapper:
//!
//! * `PlainConv`: 3x3 conv, batch norm, ReLU (VGG-style).
//! * `ResidualBottleneck`: 1x1 reduce, 3x3, 1x1 expand, each with batch norm,
//!   plus an identity or projection shortcut (ResNet-style).
//! * `ResnextBottleneck`: same, with the 3x3 convolution split into
//!   `cardinality` groups.
//! * `DepthwiseSeparable`: two depthwise-separable convolutions with batch
//!   norm and a shortcut (Xception-style unit).
//! * `SeWrapper`: squeeze-and-excitation gating of the inner block's residual
//!   branch, applied before the addition.

mod compiled;
mod network;
mod params;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Dims;

pub use network::{
    build_network, effective_se_reduction, Family, FamilyOptions, ForwardOutput, ForwardPass, HeadSpec,
    Model, NetworkConfig, NetworkSpec, Scale, StemSpec,
};
pub use params::{
    block_forward, depthwise_separable_forward, residual_block_forward, resnext_block_forward, se_gate,
    BlockParams, ConvBn, SeParams, SeparableParams,
};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WeightFile, WEIGHTS_MAGIC};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    PlainConv,
    ResidualBottleneck,
    ResnextBottleneck { cardinality: usize },
    DepthwiseSeparable,
    SeWrapper { inner: Box<BlockKind>, reduction: usize },
}

impl BlockKind {
    /// The kind with any SE wrapper removed.
    pub fn base(&self) -> &BlockKind {
        match self {
            BlockKind::SeWrapper { inner, .. } => inner.base(),
            k => k,
        }
    }

    pub fn se_reduction(&self) -> Option<usize> {
        match self {
            BlockKind::SeWrapper { reduction, .. } => Some(*reduction),
            _ => None,
        }
    }

    pub fn is_bottleneck(&self) -> bool {
        matches!(
            self.base(),
            BlockKind::ResidualBottleneck | BlockKind::ResnextBottleneck { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub channels_in: usize,
    pub channels_out: usize,
    pub stride: usize,
    /// Width of the bottleneck's inner convolutions. Equal to `channels_out`
    /// for the non-bottleneck kinds.
    pub width: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, channels_in: usize, channels_out: usize, stride: usize, width: usize) -> Result<Self> {
        let spec = BlockSpec {
            kind,
            channels_in,
            channels_out,
            stride,
            width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels_in == 0 || self.channels_out == 0 || self.width == 0 {
            return Err(Error::Config(format!("block channel counts must be >= 1: {self:?}")));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Config(format!("block stride must be 1 or 2, got {}", self.stride)));
        }
        if let BlockKind::SeWrapper { inner, reduction } = &self.kind {
            if matches!(**inner, BlockKind::SeWrapper { .. } | BlockKind::PlainConv) {
                return Err(Error::Config(format!("SE wrapper cannot wrap {inner:?}")));
            }
            if *reduction == 0 || self.channels_out % reduction != 0 {
                return Err(Error::Config(format!(
                    "SE reduction {reduction} must divide output channels {}",
                    self.channels_out
                )));
            }
        }
        if let BlockKind::ResnextBottleneck { cardinality } = self.kind.base() {
            if *cardinality == 0 || self.width % cardinality != 0 {
                return Err(Error::Config(format!(
                    "cardinality {cardinality} must divide bottleneck width {}",
                    self.width
                )));
            }
        }
        Ok(())
    }

    /// True when the block needs a projection on the shortcut path.
    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.channels_in != self.channels_out
    }

    pub fn has_shortcut(&self) -> bool {
        !matches!(self.kind.base(), BlockKind::PlainConv)
    }

    /// Declared output shape for an input of `input` dims.
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.c() != self.channels_in {
            return Err(Error::shape(
                "block",
                format!("input with {} channels", self.channels_in),
                input,
            ));
        }
        let down = |v: usize| (v - 1) / self.stride + 1;
        Ok(Dims::new(input.n(), self.channels_out, down(input.h()), down(input.w())))
    }
}

/// Parameters of a `k x k` depthwise convolution followed by a 1x1 pointwise one.
pub fn separable_param_count(channels_in: usize, channels_out: usize, kernel: usize) -> usize {
    channels_in * kernel * kernel + channels_in * channels_out
}

/// Parameters of a dense `k x k` convolution.
pub fn dense_param_count(channels_in: usize, channels_out: usize, kernel: usize) -> usize {
    channels_in * channels_out * kernel * kernel
}
