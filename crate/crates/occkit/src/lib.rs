//! occkit: semantic occupancy grid toolkit.
//!
//! The crate covers the path from raw per-frame voxel grids to evaluated
//! predictions: taxonomy remapping and 2D collapse, per-voxel rigid scene
//! flow, instance segmentation with oriented box fits, flow-propagated
//! multi-object tracking, PCA shape alignment, grid/object/background
//! metrics with a dimension-plausibility mixture model, synthetic scenario
//! rendering for ground truth, and a chunked binary container plus CLI.

pub mod align;
pub mod annotation;
pub mod assignment;
pub mod boxfit;
pub mod camera;
pub mod cli;
pub mod container;
pub mod error;
pub mod flow;
pub mod gmm;
pub mod grid;
pub mod metrics;
pub mod objects;
pub mod pose;
pub mod scenario;
pub mod scenegen;
pub mod taxonomy;
pub mod tracking;

pub use error::{Error, Result};
pub use grid::{FovMask, FrameRef, GridSpec, SemanticGrid};
pub use pose::Pose;
pub use taxonomy::{ClassId, LabelMap, LabelTaxonomy};
