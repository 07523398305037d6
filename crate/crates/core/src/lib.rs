//! Voxel volumes and binary masks for slice-wise tumor segmentation, with the
//! codecs, file formats, metrics and surface export built on top of them.
//!
//! All grids are stored row-major in `(z, y, x)` order: `x` varies fastest,
//! then `y`, then the axial slice index `z`.

pub mod io;
pub mod mesh;
pub mod metrics;
pub mod strategy;
pub mod volume;

pub use strategy::Strategy;

pub use volume::{
    BoundingBox2D, CenterRule, Dims3, IntensityVolume, Mask3D, Prompt, SliceMask2D, Spacing,
    TumorExtent, VolumeError,
};
