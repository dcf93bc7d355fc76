//! Neural-network pruning with F-statistic screening.
//!
//! The crate trains small dense and convolutional networks from scratch and
//! prunes them by ranking weights or batch-norm channels with a mix of a
//! class-separation score (the one-way ANOVA F-statistic of each member's
//! per-sample activity, accumulated online over an epoch) and the member's
//! magnitude.
//!
//! - [`nn`]: the training engine.
//! - [`screening`]: online F-statistic accumulation and feature extraction.
//! - [`pruning`]: ranking metrics, the logistic keep schedule, the weight-level
//!   and channel-level train-and-prune loops, and structural compaction.
//! - [`data`]: MNIST / CIFAR-10 loaders, augmentation and batching.
//! - [`harness`]: experiment configs, checkpoints, metrics logs and reports.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pruning;
pub mod screening;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
