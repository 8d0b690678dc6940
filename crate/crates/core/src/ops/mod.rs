//! Forward operations and their analytic gradients. Every function here is a
//! pure function of its arguments except [`batchnorm`] in training mode, which
//! also updates the running statistics of the parameter record it is given.

mod activation;
mod conv;
mod norm;
mod pool;
mod resize;

pub use activation::{relu, relu_grad, sigmoid, sigmoid_grad, sigmoid_scalar};
pub(crate) use activation::sigmoid_grad_from_output;
pub use conv::{conv2d, conv2d_grad, conv_output_dims, ConvGrads, ConvParams, ConvSpec};
pub(crate) use conv::{conv_backward, conv_forward};
pub use norm::{batch_stats, batchnorm, batchnorm_grad, BatchNormParams, BatchStats, BnCache, BnGrads, BN_EPS, BN_MOMENTUM};
pub(crate) use norm::{blend_running, bn_backward, bn_forward};
pub use pool::{gap, gap_grad, linear, linear_grad, scale_channels, scale_channels_grad, LinearGrads};
pub use resize::bilinear_resize;
