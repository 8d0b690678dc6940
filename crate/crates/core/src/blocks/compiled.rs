//! Blocks bound to parameter ids in a [`ParamStore`], recorded onto a tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::graph::{ParamId, ParamStore, RunningStats, Tape, Var};
use crate::ops::{BatchNormParams, ConvParams, ConvSpec, BN_EPS, BN_MOMENTUM};
use crate::tensor::{Dims, Real, Tensor4};

use super::params::{BlockParams, ConvBn, SeParams, SeparableParams};
use super::{BlockKind, BlockSpec};

/// Generator for one named parameter: ChaCha8 keyed by SHA-256(seed || name),
/// so a parameter's initial value depends only on the seed, its name and its
/// shape.
pub(crate) fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}

fn normal_tensor(seed: u64, name: &str, dims: Dims, std: Real) -> Tensor4 {
    let mut rng = param_rng(seed, name);
    let data = (0..dims.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z as Real * std
        })
        .collect();
    Tensor4::new(dims, data).expect("parameter dims are non-zero")
}

#[derive(Clone, Debug)]
pub(crate) struct ConvLayer {
    pub kernel: ParamId,
    pub spec: ConvSpec,
}

#[derive(Clone, Debug)]
pub(crate) struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct ConvBnLayer {
    pub conv: ConvLayer,
    pub bn: BnLayer,
}

#[derive(Clone, Debug)]
pub(crate) struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct SeLayer {
    pub squeeze: LinearLayer,
    pub excite: LinearLayer,
}

#[derive(Clone, Debug)]
pub(crate) enum CompiledBlock {
    Plain(ConvBnLayer),
    Bottleneck {
        reduce: ConvBnLayer,
        spatial: ConvBnLayer,
        expand: ConvBnLayer,
        shortcut: Option<ConvBnLayer>,
        se: Option<SeLayer>,
    },
    Separable {
        depthwise1: ConvLayer,
        pointwise1: ConvLayer,
        bn1: BnLayer,
        depthwise2: ConvLayer,
        pointwise2: ConvLayer,
        bn2: BnLayer,
        shortcut: Option<ConvBnLayer>,
        se: Option<SeLayer>,
    },
}

/// Allocates and initializes parameters (Kaiming fan-in scaling for conv and
/// linear weights, zero biases, gamma = 1, beta = 0).
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub running: &'a mut Vec<RunningStats>,
    pub seed: u64,
}

impl Builder<'_> {
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, groups: usize) -> Result<ConvLayer> {
        let fan_in = (c_in / groups) * k * k;
        let std = (2.0 / fan_in as Real).sqrt();
        let full = format!("{name}.weight");
        let dims = Dims::new(c_out, c_in / groups, k, k);
        let kernel = self.store.add(&full, normal_tensor(self.seed, &full, dims, std))?;
        Ok(ConvLayer {
            kernel,
            spec: ConvSpec::same(k, stride, groups),
        })
    }

    pub fn bn(&mut self, name: &str, c: usize) -> Result<BnLayer> {
        let gamma = self.store.add(format!("{name}.gamma"), Tensor4::vector(vec![1.0; c]))?;
        let beta = self.store.add(format!("{name}.beta"), Tensor4::vector(vec![0.0; c]))?;
        self.running.push(RunningStats::new(name, c));
        Ok(BnLayer {
            gamma,
            beta,
            running: self.running.len() - 1,
        })
    }

    pub fn conv_bn(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, groups: usize) -> Result<ConvBnLayer> {
        Ok(ConvBnLayer {
            conv: self.conv(&format!("{name}.conv"), c_in, c_out, k, stride, groups)?,
            bn: self.bn(&format!("{name}.bn"), c_out)?,
        })
    }

    pub fn linear(&mut self, name: &str, c_in: usize, c_out: usize, gain: Real) -> Result<LinearLayer> {
        let full = format!("{name}.weight");
        let std = (gain / c_in as Real).sqrt();
        let weight = self.store.add(&full, normal_tensor(self.seed, &full, Dims::new(c_out, c_in, 1, 1), std))?;
        let bias = self.store.add(format!("{name}.bias"), Tensor4::vector(vec![0.0; c_out]))?;
        Ok(LinearLayer { weight, bias })
    }

    fn se(&mut self, name: &str, c: usize, reduction: usize) -> Result<SeLayer> {
        let hidden = c / reduction;
        Ok(SeLayer {
            squeeze: self.linear(&format!("{name}.squeeze"), c, hidden, 2.0)?,
            excite: self.linear(&format!("{name}.excite"), hidden, c, 1.0)?,
        })
    }

    fn shortcut(&mut self, name: &str, spec: &BlockSpec) -> Result<Option<ConvBnLayer>> {
        if spec.needs_projection() {
            Ok(Some(self.conv_bn(name, spec.channels_in, spec.channels_out, 1, spec.stride, 1)?))
        } else {
            Ok(None)
        }
    }

    pub fn block(&mut self, name: &str, spec: &BlockSpec) -> Result<CompiledBlock> {
        spec.validate()?;
        let se_reduction = spec.kind.se_reduction();
        let (cin, cout, w, s) = (spec.channels_in, spec.channels_out, spec.width, spec.stride);
        Ok(match spec.kind.base() {
            BlockKind::PlainConv => CompiledBlock::Plain(self.conv_bn(&format!("{name}.conv3x3"), cin, cout, 3, s, 1)?),
            BlockKind::ResidualBottleneck | BlockKind::ResnextBottleneck { .. } => {
                let groups = match spec.kind.base() {
                    BlockKind::ResnextBottleneck { cardinality } => *cardinality,
                    _ => 1,
                };
                let reduce = self.conv_bn(&format!("{name}.reduce"), cin, w, 1, 1, 1)?;
                let spatial = self.conv_bn(&format!("{name}.spatial"), w, w, 3, s, groups)?;
                let expand = self.conv_bn(&format!("{name}.expand"), w, cout, 1, 1, 1)?;
                let se = se_reduction.map(|r| self.se(&format!("{name}.se"), cout, r)).transpose()?;
                let shortcut = self.shortcut(&format!("{name}.shortcut"), spec)?;
                CompiledBlock::Bottleneck {
                    reduce,
                    spatial,
                    expand,
                    shortcut,
                    se,
                }
            }
            BlockKind::DepthwiseSeparable => {
                let depthwise1 = self.conv(&format!("{name}.sep1.depthwise"), cin, cin, 3, s, cin)?;
                let pointwise1 = self.conv(&format!("{name}.sep1.pointwise"), cin, cout, 1, 1, 1)?;
                let bn1 = self.bn(&format!("{name}.bn1"), cout)?;
                let depthwise2 = self.conv(&format!("{name}.sep2.depthwise"), cout, cout, 3, 1, cout)?;
                let pointwise2 = self.conv(&format!("{name}.sep2.pointwise"), cout, cout, 1, 1, 1)?;
                let bn2 = self.bn(&format!("{name}.bn2"), cout)?;
                let se = se_reduction.map(|r| self.se(&format!("{name}.se"), cout, r)).transpose()?;
                let shortcut = self.shortcut(&format!("{name}.shortcut"), spec)?;
                CompiledBlock::Separable {
                    depthwise1,
                    pointwise1,
                    bn1,
                    depthwise2,
                    pointwise2,
                    bn2,
                    shortcut,
                    se,
                }
            }
            BlockKind::SeWrapper { .. } => unreachable!("base() strips wrappers"),
        })
    }
}

impl ConvLayer {
    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.conv(x, self.kernel, None, self.spec)
    }

    fn extract(&self, store: &ParamStore) -> ConvParams {
        let kernel = store.get(self.kernel).clone();
        let out = kernel.dims().n();
        ConvParams {
            kernel,
            bias: vec![0.0; out],
            stride: self.spec.stride,
            padding: self.spec.padding,
            groups: self.spec.groups,
        }
    }
}

impl BnLayer {
    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.batchnorm(x, self.gamma, self.beta, self.running)
    }

    fn extract(&self, store: &ParamStore, running: &[RunningStats]) -> BatchNormParams {
        let rs = &running[self.running];
        BatchNormParams {
            gamma: store.get(self.gamma).data().to_vec(),
            beta: store.get(self.beta).data().to_vec(),
            running_mean: rs.mean.clone(),
            running_var: rs.var.clone(),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

impl ConvBnLayer {
    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let y = self.conv.record(tape, x)?;
        self.bn.record(tape, y)
    }

    fn extract(&self, store: &ParamStore, running: &[RunningStats]) -> ConvBn {
        ConvBn {
            conv: self.conv.extract(store),
            bn: self.bn.extract(store, running),
        }
    }
}

impl LinearLayer {
    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }
}

impl SeLayer {
    fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let pooled = tape.gap(x);
        let z = self.squeeze.record(tape, pooled)?;
        let z = tape.relu(z);
        let z = self.excite.record(tape, z)?;
        let gate = tape.sigmoid(z);
        tape.scale_channels(x, gate)
    }

    fn extract(&self, store: &ParamStore) -> SeParams {
        SeParams {
            squeeze_weights: store.get(self.squeeze.weight).clone(),
            squeeze_bias: store.get(self.squeeze.bias).data().to_vec(),
            excite_weights: store.get(self.excite.weight).clone(),
            excite_bias: store.get(self.excite.bias).data().to_vec(),
        }
    }
}

fn record_shortcut(shortcut: &Option<ConvBnLayer>, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
    match shortcut {
        Some(proj) => proj.record(tape, x),
        None => Ok(x),
    }
}

impl CompiledBlock {
    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self {
            CompiledBlock::Plain(cb) => {
                let y = cb.record(tape, x)?;
                Ok(tape.relu(y))
            }
            CompiledBlock::Bottleneck {
                reduce,
                spatial,
                expand,
                shortcut,
                se,
            } => {
                let h = reduce.record(tape, x)?;
                let h = tape.relu(h);
                let h = spatial.record(tape, h)?;
                let h = tape.relu(h);
                let mut h = expand.record(tape, h)?;
                if let Some(se) = se {
                    h = se.record(tape, h)?;
                }
                let s = record_shortcut(shortcut, tape, x)?;
                let sum = tape.add(h, s)?;
                Ok(tape.relu(sum))
            }
            CompiledBlock::Separable {
                depthwise1,
                pointwise1,
                bn1,
                depthwise2,
                pointwise2,
                bn2,
                shortcut,
                se,
            } => {
                let h = depthwise1.record(tape, x)?;
                let h = pointwise1.record(tape, h)?;
                let h = bn1.record(tape, h)?;
                let h = tape.relu(h);
                let h = depthwise2.record(tape, h)?;
                let h = pointwise2.record(tape, h)?;
                let mut h = bn2.record(tape, h)?;
                if let Some(se) = se {
                    h = se.record(tape, h)?;
                }
                let s = record_shortcut(shortcut, tape, x)?;
                let sum = tape.add(h, s)?;
                Ok(tape.relu(sum))
            }
        }
    }

    /// Copies the block's parameters out into an explicit record.
    pub fn extract(&self, store: &ParamStore, running: &[RunningStats]) -> BlockParams {
        match self {
            CompiledBlock::Plain(cb) => BlockParams::Plain(cb.extract(store, running)),
            CompiledBlock::Bottleneck {
                reduce,
                spatial,
                expand,
                shortcut,
                se,
            } => BlockParams::Bottleneck {
                reduce: reduce.extract(store, running),
                spatial: spatial.extract(store, running),
                expand: expand.extract(store, running),
                shortcut: shortcut.as_ref().map(|s| s.extract(store, running)),
                se: se.as_ref().map(|s| s.extract(store)),
            },
            CompiledBlock::Separable {
                depthwise1,
                pointwise1,
                bn1,
                depthwise2,
                pointwise2,
                bn2,
                shortcut,
                se,
            } => BlockParams::Separable {
                first: SeparableParams {
                    depthwise: depthwise1.extract(store),
                    pointwise: pointwise1.extract(store),
                },
                bn1: bn1.extract(store, running),
                second: SeparableParams {
                    depthwise: depthwise2.extract(store),
                    pointwise: pointwise2.extract(store),
                },
                bn2: bn2.extract(store, running),
                shortcut: shortcut.as_ref().map(|s| s.extract(store, running)),
                se: se.as_ref().map(|s| s.extract(store)),
            },
        }
    }
}

impl BlockParams {
    /// Randomly initialized parameters for a standalone block, drawn exactly as
    /// the network builder would draw them under the name prefix `block`.
    pub fn init(spec: &BlockSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut running = Vec::new();
        let compiled = Builder {
            store: &mut store,
            running: &mut running,
            seed,
        }
        .block("block", spec)?;
        Ok(compiled.extract(&store, &running))
    }
}
