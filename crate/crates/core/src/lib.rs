//! Copy-paste augmentation for instance segmentation.
//!
//! Annotated instances are cut out of their image with a feathered alpha
//! matte, the hole they leave is filled by harmonic inpainting, and the
//! instance is pasted back under a small affine transform. The translation
//! is either jittered around the original position or drawn from an
//! appearance-consistency heatmap that scores every candidate center by how
//! well the background around it matches the background around the
//! original placement.
//!
//! The crate is organised bottom-up:
//!
//! * [`annotations`] and [`rle`]: COCO-style documents and masks.
//! * [`maskops`]: rasterization, contour rings, feathered alpha, cutting.
//! * [`inpaint`]: diffusion hole filling.
//! * [`transform`]: affine tuples, jitter sampling, patch warping.
//! * [`heatmap`]: appearance distance, heatmap, probability map, sampling.
//! * [`pipeline`]: per-image and per-dataset augmentation.
//! * [`raw`]: flat-buffer entry point for dataloader bindings.
//! * [`cli`]: the `instaboost` command line.

pub mod annotations;
pub mod cli;
pub mod grid;
pub mod heatmap;
pub mod inpaint;
pub mod maskops;
pub mod pipeline;
pub mod raw;
pub mod rle;
pub mod synth;
pub mod transform;

pub use annotations::{
    parse_dataset, serialize_dataset, validate, BBox, Category, DatasetIndex, ImageRecord,
    InstanceAnnotation, Segmentation, ValidationReport,
};
pub use grid::Grid;
pub use heatmap::{ConsistencyHeatmap, HeatmapConfig, ProbabilityMap};
pub use inpaint::InpaintConfig;
pub use maskops::{AlphaInstancePatch, AlphaPlane, BinaryMask, ContourRingSet};
pub use pipeline::{AugmentConfig, AugmentMode, AugmentedSample, RunStats};
pub use transform::{AffineTuple, JitterConfig};

/// Library version, shared with the command line and bindings.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
