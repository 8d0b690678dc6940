//! Parameter storage and a reverse-mode tape over the ops in [`crate::ops`].
//!
//! The tape records each op together with its output; parameters are borrowed
//! from a [`ParamStore`] rather than copied. `backward` walks the records in
//! reverse and returns one gradient tensor per stored parameter.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, BatchStats, BnCache, ConvSpec};
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in a fixed, deterministic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor4>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor4) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor4 {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4 {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor4] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor4] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor4::len).sum()
    }
}

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
}

impl RunningStats {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        RunningStats {
            name: name.into(),
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn absorb(&mut self, stats: &BatchStats) {
        ops::blend_running(&mut self.mean, &mut self.var, stats, ops::BN_MOMENTUM);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Var(usize);

enum Op {
    Input,
    Conv {
        x: Var,
        kernel: ParamId,
        bias: Option<ParamId>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        cache: BnCache,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Gap(Var),
    Linear {
        x: Var,
        weight: ParamId,
        bias: ParamId,
    },
    ScaleChannels {
        x: Var,
        scale: Var,
    },
}

struct Node {
    value: Tensor4,
    op: Op,
}

pub(crate) struct Tape<'a> {
    params: &'a ParamStore,
    running: &'a [RunningStats],
    training: bool,
    nodes: Vec<Node>,
    bn_updates: Vec<(usize, BatchStats)>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore, running: &'a [RunningStats], training: bool) -> Self {
        Tape {
            params,
            running,
            training,
            nodes: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor4, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    /// Which ReLU inputs are positive, over every ReLU node in recording
    /// order. Two passes with equal patterns lie in the same linear region of
    /// every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|&v| v > 0.0))
            .collect()
    }

    pub fn into_bn_updates(self) -> Vec<(usize, BatchStats)> {
        self.bn_updates
    }

    pub fn input(&mut self, x: Tensor4) -> Var {
        self.push(x, Op::Input)
    }

    pub fn conv(&mut self, x: Var, kernel: ParamId, bias: Option<ParamId>, spec: ConvSpec) -> Result<Var> {
        let b = bias.map(|id| self.params.get(id).data());
        let out = ops::conv_forward(self.value(x), self.params.get(kernel), b, spec)?;
        Ok(self.push(out, Op::Conv { x, kernel, bias, spec }))
    }

    pub fn batchnorm(&mut self, x: Var, gamma: ParamId, beta: ParamId, running: usize) -> Result<Var> {
        let rs = &self.running[running];
        let (out, cache, stats) = ops::bn_forward(
            self.value(x),
            self.params.get(gamma).data(),
            self.params.get(beta).data(),
            &rs.mean,
            &rs.var,
            ops::BN_EPS,
            self.training,
        )?;
        if let Some(s) = stats {
            self.bn_updates.push((running, s));
        }
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, cache }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn gap(&mut self, x: Var) -> Var {
        let out = ops::gap(self.value(x));
        self.push(out, Op::Gap(x))
    }

    pub fn linear(&mut self, x: Var, weight: ParamId, bias: ParamId) -> Result<Var> {
        let out = ops::linear(self.value(x), self.params.get(weight), self.params.get(bias).data())?;
        Ok(self.push(out, Op::Linear { x, weight, bias }))
    }

    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let out = ops::scale_channels(self.value(x), self.value(scale))?;
        Ok(self.push(out, Op::ScaleChannels { x, scale }))
    }

    /// Back-propagates `seed` from `root` and returns gradients for every
    /// parameter in the store (zeros for parameters the graph never touched).
    pub fn backward(&self, root: Var, seed: Tensor4) -> Result<Vec<Tensor4>> {
        self.value(root).expect_dims("backward seed", seed.dims())?;
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor4>> = (0..self.params.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Conv { x, kernel, bias, spec } => {
                    let cg = ops::conv_backward(self.value(*x), self.params.get(*kernel), *spec, &g)?;
                    accumulate(&mut param_grads[kernel.0], cg.d_kernel)?;
                    if let Some(b) = bias {
                        let shape = self.params.get(*b).dims();
                        accumulate(&mut param_grads[b.0], Tensor4::new(shape, cg.d_bias)?)?;
                    }
                    accumulate(&mut grads[x.0], cg.d_input)?;
                }
                Op::BatchNorm { x, gamma, beta, cache } => {
                    let bg = ops::bn_backward(self.params.get(*gamma).data(), cache, &g)?;
                    let shape = self.params.get(*gamma).dims();
                    accumulate(&mut param_grads[gamma.0], Tensor4::new(shape, bg.d_gamma)?)?;
                    accumulate(&mut param_grads[beta.0], Tensor4::new(shape, bg.d_beta)?)?;
                    accumulate(&mut grads[x.0], bg.d_input)?;
                }
                Op::Relu(x) => {
                    let d = ops::relu_grad(self.value(*x), &g)?;
                    accumulate(&mut grads[x.0], d)?;
                }
                Op::Sigmoid(x) => {
                    let d = ops::sigmoid_grad_from_output(&self.nodes[i].value, &g)?;
                    accumulate(&mut grads[x.0], d)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g)?;
                }
                Op::Gap(x) => {
                    let d = ops::gap_grad(self.value(*x).dims(), &g)?;
                    accumulate(&mut grads[x.0], d)?;
                }
                Op::Linear { x, weight, bias } => {
                    let w = self.params.get(*weight);
                    let b = self.params.get(*bias);
                    let lg = ops::linear_grad(self.value(*x), w, b.data(), &g)?;
                    accumulate(&mut param_grads[weight.0], lg.d_weights)?;
                    accumulate(&mut param_grads[bias.0], Tensor4::new(b.dims(), lg.d_bias)?)?;
                    accumulate(&mut grads[x.0], lg.d_input)?;
                }
                Op::ScaleChannels { x, scale } => {
                    let (dx, ds) = ops::scale_channels_grad(self.value(*x), self.value(*scale), &g)?;
                    accumulate(&mut grads[x.0], dx)?;
                    accumulate(&mut grads[scale.0], ds)?;
                }
            }
        }

        Ok(param_grads
            .into_iter()
            .zip(self.params.values())
            .map(|(g, p)| g.unwrap_or_else(|| Tensor4::zeros(p.dims())))
            .collect())
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
