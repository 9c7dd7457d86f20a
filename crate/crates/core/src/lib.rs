//! Disentangled scenario factorization for multi-scenario ranking.
//!
//! The crate is organized by subsystem:
//!
//! - [`tensor`]: dense kernels, clamped angles, and a gradient checker.
//! - [`factorization`]: factor banks, gating, and the full network.
//! - [`disentangle`]: centroid-angle regularizers and the equiangular frame.
//! - [`scenario_aware`]: scenario-aware batch normalization and feature filtering.
//! - [`training`]: losses, Adam, learning-rate schedule, and the training loop.
//! - [`data`]: synthetic ranking data, CSV exchange, normalization, partitioning.
//! - [`evalkit`]: AUC, subset AUC, relative improvement, and the attention probe.
//! - [`verify`]: gradient-law and equiangular-frame measurement suites.

pub mod data;
pub mod disentangle;
pub mod error;
pub mod evalkit;
pub mod factorization;
pub mod nn;
pub mod scenario_aware;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
