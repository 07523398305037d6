//! File formats: NIfTI-1 volumes, dataset manifests and display windowing.

mod manifest;
pub mod nifti;
mod window;

pub use manifest::{load_manifest, DatasetManifest, ManifestError, PatientRecord};
pub use nifti::{
    load_mask, load_volume, read_nifti, save_mask, save_volume, Datatype, NiftiError, NiftiMeta,
};
pub use window::{percentile_nearest_rank, window_to_u8};
