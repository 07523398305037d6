use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate patient_id {0:?}")]
    DuplicateId(String),
    #[error("record {index}: field {field} is empty")]
    EmptyField { index: usize, field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub image_path: String,
    pub gt_mask_path: String,
}

/// Patients to evaluate, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<PatientRecord>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn parse(json: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let entries: Vec<PatientRecord> = serde_json::from_str(json)?;
        let mut seen = HashSet::new();
        for (index, r) in entries.iter().enumerate() {
            for (field, value) in [
                ("patient_id", &r.patient_id),
                ("image_path", &r.image_path),
                ("gt_mask_path", &r.gt_mask_path),
            ] {
                if value.is_empty() {
                    return Err(ManifestError::EmptyField { index, field });
                }
            }
            if !seen.insert(r.patient_id.as_str()) {
                return Err(ManifestError::DuplicateId(r.patient_id.clone()));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Reads a JSON array of patient records; relative paths resolve against the
/// manifest's own directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, base)
}
