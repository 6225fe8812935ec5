//! Domain-aligned fine-tuning and flat-valley checkpoint averaging for
//! traffic classifiers, with the data pipeline and evaluation harness around
//! them.
//!
//! * [`model`] — the reference encoder/classifier over flat parameters.
//! * [`losses`] — alignment terms, label-smoothed cross-entropy, the total objective.
//! * [`ensemble`] — valley detection, checkpoint weights, the online training driver.
//! * [`data`] — pcap parsing, flow assembly, features, synthetic shifted traffic.
//! * [`eval`] — folds, metrics, divergence diagnostics, experiments.
//! * [`config`] / [`cli`] — the operator surface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod training;

pub use error::{Error, Result};
