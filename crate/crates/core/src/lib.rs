//! Conditional MMD classification with a learned compound kernel.
//!
//! A Gaussian-mixture kernel is applied to the codes of an auto-encoder's
//! encoder rather than to raw inputs. The encoder and a softmax classifier are
//! trained jointly by minimizing the conditional MMD between true and
//! predicted label distributions, with the reconstruction loss keeping the
//! encoder close to injective.
//!
//! Module map:
//!
//! - [`linalg`]: dense matrices, Cholesky solves
//! - [`kernels`]: Gram construction and its gradient
//! - [`cmmd`]: the trace estimator, its explicit-operator oracle, the H matrix
//!   and the reverse pass
//! - [`network`]: encoder/decoder/classifier MLPs, reconstruction and
//!   confidence losses, checkpoints
//! - [`training`]: optimizers, schedules, supervised and semi-supervised loops
//! - [`data`]: IDX parsing, synthetic blobs, labelled splits
//! - [`diagnostics`]: H-matrix heat maps, kernel-value histograms
//! - [`config`]: flat `key=value` run configuration used by the CLI

pub mod cmmd;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Mat;
