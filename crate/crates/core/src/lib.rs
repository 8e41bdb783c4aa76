//! Post-processing for semantic segmentation: ensemble voting over model
//! outputs, dense fully-connected CRF refinement, and small-region cleanup,
//! plus the confusion-matrix bookkeeping used to score each stage.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! the batch pipeline live in the `segrefine` crate.
#![no_std]

extern crate alloc;

pub mod densecrf;
pub mod ensemble;
mod error;
pub mod maps;
pub mod metrics;
pub mod morphology;
pub mod synth;

pub use error::{Error, Result};
pub use maps::{
    argmax_labels, probs_from_labels, unary_from_probs, LabelMap, ProbMap, RgbImage, UnaryMap, IGNORE_LABEL,
};
