//! Registered volumes, kept as NIfTI files under `<data-dir>/volumes`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use slicetrack_core::io::{load_mask, load_volume};
use slicetrack_core::{IntensityVolume, Mask3D};

use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub path: PathBuf,
    pub mask: Arc<Mask3D>,
}

/// A volume never changes after registration; attaching ground truth
/// replaces the entry, not the voxels.
#[derive(Debug, Clone)]
pub struct VolumeEntry {
    pub id: String,
    pub path: PathBuf,
    pub volume: Arc<IntensityVolume>,
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug)]
pub struct VolumeStore {
    dir: PathBuf,
    entries: RwLock<BTreeMap<String, Arc<VolumeEntry>>>,
    next: AtomicU64,
}

fn nifti_name(stem: &str, bytes: &[u8]) -> String {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        format!("{stem}.nii.gz")
    } else {
        format!("{stem}.nii")
    }
}

fn stem_of(path: &Path) -> Option<&str> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"))
}

impl VolumeStore {
    /// Opens `dir`, reloading volumes and ground truths saved by earlier runs.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        let dir = dir.join("volumes");
        std::fs::create_dir_all(&dir)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        let mut entries = BTreeMap::new();
        let mut max_n = 0;
        for path in &files {
            let Some(stem) = stem_of(path) else { continue };
            let Some(n) = stem.strip_prefix("vol-").and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            let Ok(volume) = load_volume(path) else {
                eprintln!("skipping unreadable volume {}", path.display());
                continue;
            };
            max_n = max_n.max(n);
            entries.insert(
                stem.to_string(),
                VolumeEntry {
                    id: stem.to_string(),
                    path: path.clone(),
                    volume: Arc::new(volume),
                    ground_truth: None,
                },
            );
        }
        for path in &files {
            let Some(id) = stem_of(path).and_then(|s| s.strip_suffix("_gt")) else {
                continue;
            };
            if let (Some(e), Ok(mask)) = (entries.get_mut(id), load_mask(path)) {
                if mask.dims() == e.volume.dims() {
                    e.ground_truth = Some(GroundTruth {
                        path: path.clone(),
                        mask: Arc::new(mask),
                    });
                }
            }
        }
        Ok(Self {
            dir,
            entries: RwLock::new(entries.into_iter().map(|(k, v)| (k, Arc::new(v))).collect()),
            next: AtomicU64::new(max_n + 1),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<VolumeEntry>, ApiError> {
        self.entries
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown volume {id:?}")).with_field("volume_id"))
    }

    pub fn list(&self) -> Vec<Arc<VolumeEntry>> {
        self.entries.read().unwrap().values().cloned().collect()
    }

    /// Stores an uploaded NIfTI image and registers it.
    pub fn add(&self, bytes: &[u8]) -> Result<Arc<VolumeEntry>, ApiError> {
        let id = format!("vol-{}", self.next.fetch_add(1, Ordering::SeqCst));
        let path = self.dir.join(nifti_name(&id, bytes));
        std::fs::write(&path, bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        let volume = match load_volume(&path) {
            Ok(v) => v,
            Err(e) => {
                let _ = std::fs::remove_file(&path);
                return Err(ApiError::bad_request(format!("unreadable volume: {e}")));
            }
        };
        let entry = Arc::new(VolumeEntry {
            id: id.clone(),
            path,
            volume: Arc::new(volume),
            ground_truth: None,
        });
        self.entries.write().unwrap().insert(id, entry.clone());
        Ok(entry)
    }

    /// Attaches (or replaces) the ground-truth mask of a volume.
    pub fn set_ground_truth(&self, id: &str, bytes: &[u8]) -> Result<Arc<VolumeEntry>, ApiError> {
        let current = self.get(id)?;
        let tmp = self.dir.join(nifti_name(&format!("{id}_gt.upload"), bytes));
        std::fs::write(&tmp, bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        let mask = load_mask(&tmp);
        let mask = match mask {
            Ok(m) if m.dims() == current.volume.dims() => m,
            Ok(m) => {
                let _ = std::fs::remove_file(&tmp);
                return Err(ApiError::bad_request(format!(
                    "mask dims {:?} differ from volume dims {:?}",
                    m.dims().as_array(),
                    current.volume.dims().as_array()
                )));
            }
            Err(e) => {
                let _ = std::fs::remove_file(&tmp);
                return Err(ApiError::bad_request(format!("unreadable mask: {e}")));
            }
        };
        let path = self.dir.join(nifti_name(&format!("{id}_gt"), bytes));
        for old in [self.dir.join(format!("{id}_gt.nii")), self.dir.join(format!("{id}_gt.nii.gz"))] {
            let _ = std::fs::remove_file(old);
        }
        std::fs::rename(&tmp, &path).map_err(|e| ApiError::internal(e.to_string()))?;
        let entry = Arc::new(VolumeEntry {
            ground_truth: Some(GroundTruth {
                path,
                mask: Arc::new(mask),
            }),
            ..(*current).clone()
        });
        self.entries.write().unwrap().insert(id.to_string(), entry.clone());
        Ok(entry)
    }
}
