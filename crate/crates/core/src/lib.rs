//! Bit-flip fault injection and range-restriction mitigation for small
//! object detectors.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: deterministic binary32 tensor arithmetic with bit-level access.
//! - [`model`]: a toy CNN detector and a DETR-style detector with deformable
//!   attention blocks, both exposing a [`model::LayerRegistry`] and per-layer
//!   output hooks.
//! - [`fault`]: fault plans, bit flips on weights or neurons, audit records.
//! - [`mitigation`]: bounds profiling and the range-restriction policies
//!   (Ranger, Clipper and their global / hybrid variants).
//! - [`metrics`]: IoU, greedy matching, IVMOD rates, AP50, trace comparison.
//! - [`campaign`]: synthetic data, golden runs, fault campaigns, sweeps,
//!   placement ablations and report bundles.

pub mod campaign;
pub mod error;
pub mod fault;
pub mod metrics;
pub mod mitigation;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
