//! Part segmentation and labeling for freehand sketches.
//!
//! The pipeline rasterizes a stroke sketch, runs an hourglass network that
//! predicts a per-pixel part-label map, reads a label back for every stroke
//! point and smooths the labels along each stroke by minimizing a Potts
//! energy on the stroke chains.

pub mod nn;
pub mod sketch;
pub mod network;
pub mod refine;
pub mod render;
pub mod pipeline;
pub mod metrics;
pub mod retrieval;
