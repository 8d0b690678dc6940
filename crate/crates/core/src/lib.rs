//! Explainable CNN classification engine.

pub mod blocks;
pub mod cam;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod ops;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Dims, Grid, Real, Tensor4};
