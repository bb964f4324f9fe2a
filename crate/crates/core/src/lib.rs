//! Desk-scale workbench for VLC fingerprint localization with transfer
//! learning.
//!
//! The pipeline synthesizes RSSI fingerprints over a ceiling-LED layout
//! ([`channel_sim`]), prepares and perturbs them ([`dataset`]), trains a dense
//! regressor from scratch ([`neuralnet`]), adapts a trained model to noisy
//! conditions with frozen shared layers ([`transfer`]), and scores everything
//! in meters, success rate, time and energy ([`metrics`]). [`harness`] chains
//! the steps into reproducible experiment suites.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel_sim;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neuralnet;
pub mod transfer;

pub use error::{Error, Result};
