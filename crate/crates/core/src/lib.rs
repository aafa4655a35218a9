//! Evaluation harness for VLM-authored prompts driving open-vocabulary detectors.
//!
//! The pipeline reads an annotated image manifest, draws each target onto its
//! image, asks a vision-language model for a referring prompt at several
//! levels of detail, optionally rewrites that prompt, runs every detector
//! backend on it and scores the detections against the ground truth.

pub mod cache;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod overlay;
pub mod transport;
pub mod vlm;

pub use error::{Error, Result};
