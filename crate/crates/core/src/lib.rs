//! Unsupervised domain adaptation by inter- and intra-domain mixup training.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`tape`]: dense tensors and reverse-mode autodiff.
//! - [`optim`], [`gradcheck`], [`tensor_io`]: optimizers, the
//!   finite-difference oracle, and the on-disk tensor format.
//! - [`models`]: encoder, classifier, domain discriminator, gradient
//!   reversal, checkpointing.
//! - [`data`]: synthetic domain-shift generators, augmentations, paired
//!   batching.
//! - [`losses`]: virtual labels, mixup construction, and the five training
//!   losses.
//! - [`trainer`]: the end-to-end loop, evaluation metrics, and the ablation
//!   harness.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradcheck_suite;
pub mod losses;
pub mod models;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod tensor_io;
pub mod trainer;

pub use config::IimtConfig;
pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Dtype, Scalar, Tensor};
