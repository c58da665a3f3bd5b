//! Diagnostics for image-classifier misclassifications.
//!
//! The crate covers the whole loop: load or synthesize labeled images, train
//! a small convolutional classifier (or ingest prediction logs from any other
//! model), summarize where misclassifications go, test hypotheses about
//! their causes, and intervene on inputs by erasing saliency-anchored boxes
//! to see whether a misclassification disappears.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod intervention;
pub mod netgraph;
pub mod pipeline;
pub mod saliency;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
