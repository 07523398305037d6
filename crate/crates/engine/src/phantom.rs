//! Synthetic volumes with analytically known ground truth.

use std::path::{Path, PathBuf};

use slicetrack_core::io::{save_mask, save_volume, Datatype, NiftiError, PatientRecord};
use slicetrack_core::{Dims3, IntensityVolume, Mask3D, Spacing};

pub const LESION: f32 = 200.0;
pub const BACKGROUND: f32 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub id: String,
    pub volume: IntensityVolume,
    pub gt: Mask3D,
}

fn from_mask(id: &str, gt: Mask3D) -> Phantom {
    let voxels = gt
        .bits()
        .iter()
        .map(|&b| if b { LESION } else { BACKGROUND })
        .collect();
    let volume = IntensityVolume::new(gt.dims(), gt.spacing(), voxels).expect("dims match");
    Phantom {
        id: id.to_string(),
        volume,
        gt,
    }
}

/// Voxels with `Σ ((p - c) / r)² ≤ 1`, coordinates ordered `(z, y, x)`.
pub fn ellipsoid(id: &str, dims: Dims3, center: [f64; 3], radii: [f64; 3]) -> Phantom {
    let mut gt = Mask3D::empty(dims, Spacing::unit());
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let q: f64 = [z, y, x]
                    .iter()
                    .zip(center)
                    .zip(radii)
                    .map(|((&p, c), r)| ((p as f64 - c) / r).powi(2))
                    .sum();
                if q <= 1.0 {
                    gt.set(z, y, x, true);
                }
            }
        }
    }
    from_mask(id, gt)
}

fn disc_pixels(h: usize, w: usize, cy: usize, cx: usize, r: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y.abs_diff(cy), x.abs_diff(cx));
            if dy * dy + dx * dx <= r * r {
                px.push((y, x));
            }
        }
    }
    px
}

/// The same disc on every slice of `[z_first, z_last]`.
pub fn uniform_disc(
    id: &str,
    dims: Dims3,
    z_first: usize,
    z_last: usize,
    center: (usize, usize),
    radius: usize,
) -> Phantom {
    let mut gt = Mask3D::empty(dims, Spacing::unit());
    for z in z_first..=z_last {
        for (y, x) in disc_pixels(dims.h, dims.w, center.0, center.1, radius) {
            gt.set(z, y, x, true);
        }
    }
    from_mask(id, gt)
}

/// A uniform disc lesion plus a bright diagonal spur running from the top-left
/// corner of the lesion's tight box to its edge. The spur has lesion
/// intensity and is 8-connected to the lesion but is not part of the ground
/// truth.
pub fn distractor_disc(
    id: &str,
    dims: Dims3,
    z_first: usize,
    z_last: usize,
    center: (usize, usize),
    radius: usize,
) -> Phantom {
    let mut p = uniform_disc(id, dims, z_first, z_last, center, radius);
    let (y0, x0) = (center.0 - radius, center.1 - radius);
    for z in z_first..=z_last {
        let mut i = 0;
        while !p.gt.get(z, y0 + i, x0 + i) {
            p.volume.set(z, y0 + i, x0 + i, LESION).expect("finite");
            i += 1;
        }
    }
    p
}

/// Writes each phantom as `<id>.nii.gz` and `<id>_gt.nii.gz` plus a
/// `manifest.json` with relative paths; returns the manifest path.
pub fn write_dataset(dir: &Path, phantoms: &[Phantom]) -> Result<PathBuf, NiftiError> {
    let mut records = Vec::new();
    for p in phantoms {
        let image = format!("{}.nii.gz", p.id);
        let gt = format!("{}_gt.nii.gz", p.id);
        save_volume(&p.volume, dir.join(&image), Datatype::F32, true)?;
        save_mask(&p.gt, dir.join(&gt), true)?;
        records.push(PatientRecord {
            patient_id: p.id.clone(),
            image_path: image,
            gt_mask_path: gt,
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&records).expect("records serialize");
    std::fs::write(&path, text).map_err(|source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}
