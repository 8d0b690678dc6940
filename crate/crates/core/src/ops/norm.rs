//! Per-channel batch normalization over `(n, h, w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const BN_EPS: Real = 1e-5;
pub const BN_MOMENTUM: Real = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<Real>,
    pub beta: Vec<Real>,
    pub running_mean: Vec<Real>,
    pub running_var: Vec<Real>,
    pub momentum: Real,
    pub eps: Real,
}

impl BatchNormParams {
    /// gamma = 1, beta = 0, running statistics at the standard normal.
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (name, v) in [
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != c {
                return Err(Error::shape("batchnorm params", format!("{name} of length {c}"), v.len()));
            }
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("batchnorm running_var must be non-negative".into()));
        }
        if self.eps <= 0.0 || self.momentum <= 0.0 || self.momentum >= 1.0 {
            return Err(Error::Config("batchnorm needs eps > 0 and momentum in (0, 1)".into()));
        }
        Ok(())
    }

    /// Blends batch statistics into the running estimates.
    pub fn absorb(&mut self, stats: &BatchStats) {
        blend_running(&mut self.running_mean, &mut self.running_var, stats, self.momentum);
    }
}

pub(crate) fn blend_running(mean: &mut [Real], var: &mut [Real], stats: &BatchStats, momentum: Real) {
    let unbias = if stats.count > 1 {
        stats.count as Real / (stats.count - 1) as Real
    } else {
        1.0
    };
    for c in 0..mean.len() {
        mean[c] = (1.0 - momentum) * mean[c] + momentum * stats.mean[c];
        var[c] = (1.0 - momentum) * var[c] + momentum * stats.var[c] * unbias;
    }
}

/// Biased per-channel batch statistics and the element count they cover.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
    pub count: usize,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub(crate) x_hat: Tensor4,
    pub(crate) inv_std: Vec<Real>,
    pub(crate) training: bool,
}

pub fn batch_stats(input: &Tensor4) -> BatchStats {
    let [n, c, h, w] = input.dims().0;
    let count = n * h * w;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += input.plane(b, ch).iter().sum::<Real>();
        }
        let m = s / count as Real;
        let mut v = 0.0;
        for b in 0..n {
            v += input.plane(b, ch).iter().map(|x| (x - m) * (x - m)).sum::<Real>();
        }
        mean[ch] = m;
        var[ch] = v / count as Real;
    }
    BatchStats { mean, var, count }
}

/// Normalizes `input` with either batch statistics (`training`) or the given
/// running statistics. Returns the output, the cache for the backward pass and,
/// in training mode, the batch statistics the caller should absorb.
pub(crate) fn bn_forward(
    input: &Tensor4,
    gamma: &[Real],
    beta: &[Real],
    running_mean: &[Real],
    running_var: &[Real],
    eps: Real,
    training: bool,
) -> Result<(Tensor4, BnCache, Option<BatchStats>)> {
    let [n, c, _, _] = input.dims().0;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("parameters of length {c} for input {}", input.dims()),
            format!("length {}", gamma.len()),
        ));
    }
    let (mean, var, stats) = if training {
        let s = batch_stats(input);
        (s.mean.clone(), s.var.clone(), Some(s))
    } else {
        (running_mean.to_vec(), running_var.to_vec(), None)
    };
    let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = input.clone();
    let mut out = input.clone();
    let p = input.dims().plane();
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * p;
            let xs = &mut x_hat.data_mut()[start..start + p];
            for v in xs.iter_mut() {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
            let os = &mut out.data_mut()[start..start + p];
            for (o, xh) in os.iter_mut().zip(&x_hat.data()[start..start + p]) {
                *o = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((
        out,
        BnCache {
            x_hat,
            inv_std,
            training,
        },
        stats,
    ))
}

/// Gradients of batch normalization.
#[derive(Clone, Debug)]
pub struct BnGrads {
    pub d_input: Tensor4,
    pub d_gamma: Vec<Real>,
    pub d_beta: Vec<Real>,
}

pub(crate) fn bn_backward(gamma: &[Real], cache: &BnCache, upstream: &Tensor4) -> Result<BnGrads> {
    upstream.expect_dims("batchnorm_grad upstream", cache.x_hat.dims())?;
    let [n, c, h, w] = upstream.dims().0;
    let p = h * w;
    let count = (n * p) as Real;
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let up = upstream.plane(b, ch);
            let xh = cache.x_hat.plane(b, ch);
            d_beta[ch] += up.iter().sum::<Real>();
            d_gamma[ch] += up.iter().zip(xh).map(|(u, x)| u * x).sum::<Real>();
        }
    }
    let mut d_input = upstream.clone();
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * p;
            let scale = gamma[ch] * cache.inv_std[ch];
            let xh = &cache.x_hat.data()[start..start + p];
            let di = &mut d_input.data_mut()[start..start + p];
            if cache.training {
                let mean_dy = d_beta[ch] / count;
                let mean_dy_xhat = d_gamma[ch] / count;
                for (d, x) in di.iter_mut().zip(xh) {
                    *d = scale * (*d - mean_dy - x * mean_dy_xhat);
                }
            } else {
                for d in di.iter_mut() {
                    *d *= scale;
                }
            }
        }
    }
    Ok(BnGrads {
        d_input,
        d_gamma,
        d_beta,
    })
}

/// Batch normalization. Training mode normalizes with batch statistics and
/// updates the running estimates in `p`; eval mode reads the running estimates.
pub fn batchnorm(input: &Tensor4, p: &mut BatchNormParams, training: bool) -> Result<Tensor4> {
    p.validate()?;
    let (out, _, stats) = bn_forward(
        input,
        &p.gamma,
        &p.beta,
        &p.running_mean,
        &p.running_var,
        p.eps,
        training,
    )?;
    if let Some(s) = stats {
        p.absorb(&s);
    }
    Ok(out)
}

/// Gradients of `sum(upstream * batchnorm(input, p, training))`, evaluated at
/// the parameters' current running statistics for eval mode.
pub fn batchnorm_grad(input: &Tensor4, p: &BatchNormParams, training: bool, upstream: &Tensor4) -> Result<BnGrads> {
    p.validate()?;
    let (_, cache, _) = bn_forward(
        input,
        &p.gamma,
        &p.beta,
        &p.running_mean,
        &p.running_var,
        p.eps,
        training,
    )?;
    bn_backward(&p.gamma, &cache, upstream)
}
