//! m2restore: desk-scale all-in-one image restoration.
//!
//! A trainable encoder/bottleneck/decoder restoration network built on a
//! small reverse-mode autodiff tensor engine. Degraded inputs are routed
//! pixel-wise to sparse experts conditioned on a degradation prior, and the
//! bottleneck fuses a CNN texture branch with a linear-time selective-scan
//! state-space branch under a dynamic per-pixel gate.
//!
//! See the crate `examples/` directory for runnable entry points covering
//! corpus generation, training, evaluation, inference and routing analysis;
//! the `m2restore` binary exposes the same capabilities as subcommands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dder;
pub mod error;
pub mod loss;
pub mod mcdb;
pub mod model;
pub mod metrics;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod prompt;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
