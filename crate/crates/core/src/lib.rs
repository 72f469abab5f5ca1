//! Doppler velocity log calibration workbench.
//!
//! Simulates four-beam DVL and GNSS-RTK velocity streams with planted
//! sensor errors, estimates the errors with either a closed-form scale
//! estimator or a two-head convolutional network trained on a closed-loop
//! velocity loss, and scores both under a Monte Carlo protocol.
//!
//! Modules, bottom-up:
//! - [`geometry`]: Janus beam layout and least-squares velocity recovery.
//! - [`error_models`]: beam-level error injection and the five body-frame
//!   error parameterizations.
//! - [`simulation`]: trajectories, the noising pipeline, windowing, corpora.
//! - [`baseline`]: the scalar scale-factor estimator.
//! - [`nn`]: tensors, reverse-mode autodiff, RMSProp, gradient checking.
//! - [`dcnet`]: the calibration network, its loss and training loop.
//! - [`evaluation`]: calibration-phase sweep, test scoring, Monte Carlo.
//! - [`config`]: TOML workbench configuration and dataset manifests.

pub mod baseline;
pub mod config;
pub mod dcnet;
pub mod error;
pub mod error_models;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod seed;
pub mod simulation;

pub use error::{Error, Result};
