//! Convolutional network fabrics with link and weight pruning.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`ops`], [`param`], [`tape`], [`optim`]: dense tensors, the
//!   fabric operator set with reverse-mode gradients, and SGD.
//! - [`fabric`]: grid construction, forward evaluation, parameter accounting,
//!   DOT export and checkpoints.
//! - [`pruning`]: criteria, selection under connectivity and mask
//!   conditions, cascade removal and pruning schedules.
//! - [`noise`]: label-noise generators and clean/noisy fitting.
//! - [`data`]: datasets, splits, augmentation, the dominant-object rule.
//! - [`runner`]: training loop, learning-rate schedule and experiment
//!   orchestration.

pub mod data;
pub mod error;
pub mod fabric;
pub mod noise;
pub mod ops;
pub mod optim;
pub mod param;
pub mod pruning;
pub mod runner;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use fabric::{Fabric, FabricDims, ParamBreakdown};
pub use tensor::{Scalar, Tensor};
