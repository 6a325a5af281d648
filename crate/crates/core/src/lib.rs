//! Simulation core for Byzantine-resilient distributed SGD with heterogeneous
//! data: local objectives, a synthetic data model, the spectral robust
//! gradient estimator, adversaries, rand-k compression and training loops.
//!
//! The crate is `no_std` with `alloc`; file formats and the command line live
//! in the companion `byzsgd` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attacks;
pub mod compression;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rge;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
