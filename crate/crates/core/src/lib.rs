//! Multimodal brain MRI tumor classification.
//!
//! The crate covers the whole experiment: texture features computed from
//! grayscale scans ([`features`]), dataset ingestion, class balancing,
//! standardization and stratified folds ([`data`]), a two-head network with a
//! DenseNet-121 image branch and an MLP tabular branch ([`model`], built on the
//! small tensor stack in [`nn`]), Adam training with early stopping
//! ([`training`]), the evaluation metrics ([`metrics`]) and the orchestration
//! that ties them together into a cross-validation run ([`pipeline`]).

pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
