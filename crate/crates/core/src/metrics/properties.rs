use serde::{Deserialize, Serialize};

use crate::volume::{connected_components, Connectivity, Mask3D};

/// Ground-truth descriptors correlated against Dice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TumorProperties {
    pub n_tumor_slices: usize,
    pub tumor_volume_voxels: usize,
    pub initial_area_voxels: usize,
    /// 26-connected components; more than one flags a fragmented lesion.
    pub lesion_count: usize,
}

/// Panics if `prompt_z` is outside the volume.
pub fn tumor_properties(g: &Mask3D, prompt_z: usize) -> TumorProperties {
    assert!(prompt_z < g.dims().d, "prompt slice out of range");
    let n_tumor_slices = (0..g.dims().d).filter(|&z| g.slice_area(z) > 0).count();
    TumorProperties {
        n_tumor_slices,
        tumor_volume_voxels: g.count(),
        initial_area_voxels: g.slice_area(prompt_z),
        lesion_count: connected_components(g, Connectivity::TwentySix).count,
    }
}
