//! Explicit parameter records for single blocks and block forward passes
//! written directly against the tensor ops.
//!
//! These forwards never update batch-norm running statistics; in training mode
//! they normalize with batch statistics and discard them.

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormParams, ConvParams};
use crate::tensor::{Real, Tensor4};

use super::{BlockKind, BlockSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

/// Squeeze (C -> C/r) and excite (C/r -> C) fully connected layers.
#[derive(Clone, Debug, PartialEq)]
pub struct SeParams {
    pub squeeze_weights: Tensor4,
    pub squeeze_bias: Vec<Real>,
    pub excite_weights: Tensor4,
    pub excite_bias: Vec<Real>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparableParams {
    pub depthwise: ConvParams,
    pub pointwise: ConvParams,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams {
    Plain(ConvBn),
    Bottleneck {
        reduce: ConvBn,
        spatial: ConvBn,
        expand: ConvBn,
        shortcut: Option<ConvBn>,
        se: Option<SeParams>,
    },
    Separable {
        first: SeparableParams,
        bn1: BatchNormParams,
        second: SeparableParams,
        bn2: BatchNormParams,
        shortcut: Option<ConvBn>,
        se: Option<SeParams>,
    },
}

fn apply_bn(x: &Tensor4, p: &BatchNormParams, training: bool) -> Result<Tensor4> {
    p.validate()?;
    let (out, _, _) = ops::bn_forward(x, &p.gamma, &p.beta, &p.running_mean, &p.running_var, p.eps, training)?;
    Ok(out)
}

fn conv_bn(x: &Tensor4, p: &ConvBn, training: bool) -> Result<Tensor4> {
    apply_bn(&ops::conv2d(x, &p.conv)?, &p.bn, training)
}

/// Per-channel gate `s = sigmoid(excite(relu(squeeze(gap(x)))))` applied to
/// `features`.
pub fn se_gate(features: &Tensor4, reduction: usize, p: &SeParams) -> Result<Tensor4> {
    let c = features.dims().c();
    if reduction == 0 || c % reduction != 0 {
        return Err(Error::Config(format!("SE reduction {reduction} must divide {c} channels")));
    }
    let hidden = c / reduction;
    if p.squeeze_weights.dims().n() != hidden {
        return Err(Error::shape(
            "se_gate",
            format!("squeeze weights {hidden}x{c}x1x1"),
            p.squeeze_weights.dims(),
        ));
    }
    let pooled = ops::gap(features);
    let z = ops::relu(&ops::linear(&pooled, &p.squeeze_weights, &p.squeeze_bias)?);
    let s = ops::sigmoid(&ops::linear(&z, &p.excite_weights, &p.excite_bias)?);
    ops::scale_channels(features, &s)
}

/// Depthwise convolution (groups = channels) followed by a 1x1 pointwise one.
pub fn depthwise_separable_forward(x: &Tensor4, p: &SeparableParams) -> Result<Tensor4> {
    let c = x.dims().c();
    if p.depthwise.groups != c || p.depthwise.out_channels() != c {
        return Err(Error::shape(
            "depthwise_separable",
            format!("depthwise conv with {c} groups and {c} outputs"),
            format!("{} groups, {} outputs", p.depthwise.groups, p.depthwise.out_channels()),
        ));
    }
    if p.pointwise.kernel.dims().h() != 1 || p.pointwise.kernel.dims().w() != 1 {
        return Err(Error::Config("pointwise convolution must be 1x1".into()));
    }
    ops::conv2d(&ops::conv2d(x, &p.depthwise)?, &p.pointwise)
}

fn shortcut(x: &Tensor4, p: Option<&ConvBn>, training: bool) -> Result<Tensor4> {
    match p {
        Some(proj) => conv_bn(x, proj, training),
        None => Ok(x.clone()),
    }
}

fn bottleneck_forward(x: &Tensor4, spec: &BlockSpec, params: &BlockParams, training: bool) -> Result<Tensor4> {
    let BlockParams::Bottleneck {
        reduce,
        spatial,
        expand,
        shortcut: proj,
        se,
    } = params
    else {
        return Err(Error::Config("bottleneck block needs bottleneck parameters".into()));
    };
    let declared = spec.output_dims(x.dims())?;
    let h = ops::relu(&conv_bn(x, reduce, training)?);
    let h = ops::relu(&conv_bn(&h, spatial, training)?);
    let mut h = conv_bn(&h, expand, training)?;
    if let (Some(r), Some(se)) = (spec.kind.se_reduction(), se) {
        h = se_gate(&h, r, se)?;
    }
    let s = shortcut(x, proj.as_ref(), training)?;
    let out = ops::relu(&h.add(&s)?);
    out.expect_dims("bottleneck block output", declared)?;
    Ok(out)
}

/// ResNet bottleneck: `relu(F(x) + shortcut(x))`, where the shortcut is the
/// identity when shapes match and a strided 1x1 projection otherwise.
pub fn residual_block_forward(x: &Tensor4, spec: &BlockSpec, params: &BlockParams, training: bool) -> Result<Tensor4> {
    spec.validate()?;
    if !matches!(spec.kind.base(), BlockKind::ResidualBottleneck) {
        return Err(Error::Config(format!("expected a residual bottleneck spec, got {:?}", spec.kind)));
    }
    bottleneck_forward(x, spec, params, training)
}

/// ResNeXt bottleneck: the 3x3 convolution is grouped with `groups = cardinality`.
pub fn resnext_block_forward(x: &Tensor4, spec: &BlockSpec, params: &BlockParams, training: bool) -> Result<Tensor4> {
    spec.validate()?;
    let BlockKind::ResnextBottleneck { cardinality } = spec.kind.base() else {
        return Err(Error::Config(format!("expected a ResNeXt bottleneck spec, got {:?}", spec.kind)));
    };
    if let BlockParams::Bottleneck { spatial, .. } = params {
        if spatial.conv.groups != *cardinality {
            return Err(Error::Config(format!(
                "grouped conv uses {} groups but cardinality is {cardinality}",
                spatial.conv.groups
            )));
        }
    }
    bottleneck_forward(x, spec, params, training)
}

fn separable_unit_forward(x: &Tensor4, spec: &BlockSpec, params: &BlockParams, training: bool) -> Result<Tensor4> {
    let BlockParams::Separable {
        first,
        bn1,
        second,
        bn2,
        shortcut: proj,
        se,
    } = params
    else {
        return Err(Error::Config("separable block needs separable parameters".into()));
    };
    let declared = spec.output_dims(x.dims())?;
    let h = ops::relu(&apply_bn(&depthwise_separable_forward(x, first)?, bn1, training)?);
    let mut h = apply_bn(&depthwise_separable_forward(&h, second)?, bn2, training)?;
    if let (Some(r), Some(se)) = (spec.kind.se_reduction(), se) {
        h = se_gate(&h, r, se)?;
    }
    let s = shortcut(x, proj.as_ref(), training)?;
    let out = ops::relu(&h.add(&s)?);
    out.expect_dims("separable block output", declared)?;
    Ok(out)
}

/// Forward pass of any block kind.
pub fn block_forward(x: &Tensor4, spec: &BlockSpec, params: &BlockParams, training: bool) -> Result<Tensor4> {
    spec.validate()?;
    match spec.kind.base() {
        BlockKind::PlainConv => {
            let BlockParams::Plain(p) = params else {
                return Err(Error::Config("plain block needs plain parameters".into()));
            };
            let declared = spec.output_dims(x.dims())?;
            let out = ops::relu(&conv_bn(x, p, training)?);
            out.expect_dims("plain block output", declared)?;
            Ok(out)
        }
        BlockKind::ResidualBottleneck => residual_block_forward(x, spec, params, training),
        BlockKind::ResnextBottleneck { .. } => resnext_block_forward(x, spec, params, training),
        BlockKind::DepthwiseSeparable => separable_unit_forward(x, spec, params, training),
        BlockKind::SeWrapper { .. } => unreachable!("base() strips wrappers"),
    }
}
