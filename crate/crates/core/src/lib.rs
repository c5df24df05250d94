//! Core algorithms for synthesizing UAV air-to-ground RSSI/SINR traces under
//! jamming and detecting the attacks with a small multi-headed
//! convolutional-attention network.
//!
//! The crate is `no_std` and only needs `alloc`. The optional `std` feature
//! turns on parallel per-sample gradient evaluation during training; the
//! reduction order is fixed, so results do not depend on the feature.
//!
//! Module map:
//!
//! - [`channel`]: pathloss, shadowing, LoS probability and sum-of-rays fading.
//! - [`scenario`]: entity placement, mobility, link budget and run generation.
//! - [`dataset`]: windowing, balancing, normalization and leakage-free splits.
//! - [`nn`]: tensor engine, MH-DNN layers, training and gradient checking.
//! - [`augment`]: four-pattern flip augmentation.
//! - [`vote`]: majority voting over augmented predictions and the full
//!   decision pipeline.
//! - [`baselines`]: Gaussian naive Bayes and logistic regression.
//! - [`metrics`]: confusion counts and accuracy.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod augment;
pub mod baselines;
pub mod channel;
pub mod classifier;
pub mod dataset;
mod error;
pub(crate) mod math;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod vote;

pub use error::{Error, Result};
