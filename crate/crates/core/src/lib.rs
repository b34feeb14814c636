//! Synthetic forest point clouds for tree segmentation.
//!
//! The crate covers the whole data-generation chain:
//!
//! - [`assets`]: tree meshes with wood/leaf materials, loaded from disk or
//!   generated parametrically.
//! - [`procgen`]: seed spawning, dispersal and collision/shade/age pruning
//!   that turns a handful of assets into a [`procgen::ForestScene`].
//! - [`voxel`]: conservative triangle rasterization into a sparse labelled
//!   voxel grid.
//! - [`survey`]: criss-cross UAV flight planning, rotating-line pulse
//!   scheduling and multi-return voxel ray traversal.
//! - [`dataset`] and [`cloud_io`]: remapping, tiling, splitting, density
//!   reports, nodal baselines and the point-cloud file formats.
//! - [`ml`]: cylinder sampling, TreeMix3D augmentation and segmentation
//!   metrics.
//! - [`cli`]: configuration handling and the stage commands behind the
//!   `sylva` binary.

pub mod assets;
pub mod cli;
pub mod cloud_io;
pub mod dataset;
pub mod error;
pub mod geom;
pub mod labels;
pub mod ml;
pub mod presets;
pub mod procgen;
pub mod rng;
pub mod survey;
pub mod voxel;

pub use error::{Error, Result};
