//! Batch evaluation of a dataset manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use slicetrack_core::io::{load_mask, load_volume, DatasetManifest, PatientRecord};
use slicetrack_core::metrics::report::PatientError;
use slicetrack_core::metrics::{tumor_properties, volumetric_dice, EvalRecord, MetricsError, Report};
use slicetrack_core::volume::{tumor_extent, PromptKind};
use slicetrack_core::{CenterRule, Mask3D, Prompt, Strategy};
use thiserror::Error;

use crate::backend::{BackendRegistry, MaskRef, SessionConfig, VolumeRef};
use crate::propagation::{build_plan, run_propagation};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("no strategies selected")]
    NoStrategies,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub backend_id: String,
    pub strategies: Vec<Strategy>,
    pub prompt_kind: PromptKind,
    /// Replaces any `seed` in `params` for backends that take one.
    pub seed: Option<u64>,
    /// Pixels added on every side of a derived box prompt.
    pub pad: usize,
    pub params: BTreeMap<String, f64>,
    pub center_rule: CenterRule,
    pub bin_width: f64,
    pub threads: usize,
}

impl EvalConfig {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            strategies: Strategy::ALL.to_vec(),
            prompt_kind: PromptKind::Box,
            seed: None,
            pad: 0,
            params: BTreeMap::new(),
            center_rule: CenterRule::Midpoint,
            bin_width: 0.1,
            threads: 1,
        }
    }
}

/// Prompt derived from ground truth on slice `z`: its tight box grown by
/// `pad`, or the slice mask itself. `None` when the slice is empty.
pub fn derive_prompt(gt: &Mask3D, z: usize, kind: PromptKind, pad: usize) -> Option<Prompt> {
    let slice = gt.slice(z);
    let b = slice.bbox()?;
    Some(match kind {
        PromptKind::Box => {
            let d = gt.dims();
            Prompt::Box(b.expanded(pad, d.h, d.w).with_z(z))
        }
        PromptKind::Mask => Prompt::Mask { z, mask: slice },
    })
}

/// Runs every selected strategy on one patient. Any failure discards the
/// patient's other records.
pub fn evaluate_patient(
    record: &PatientRecord,
    manifest: &DatasetManifest,
    registry: &BackendRegistry,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>, String> {
    let image_path = manifest.resolve(&record.image_path);
    let gt_path = manifest.resolve(&record.gt_mask_path);
    let volume = Arc::new(load_volume(&image_path).map_err(|e| e.to_string())?);
    let gt = Arc::new(load_mask(&gt_path).map_err(|e| e.to_string())?);
    if gt.dims() != volume.dims() {
        return Err(format!(
            "ground truth dims {:?} differ from image dims {:?}",
            gt.dims(),
            volume.dims()
        ));
    }
    let extent = tumor_extent(&gt, cfg.center_rule).map_err(|e| format!("ground truth: {e}"))?;

    let mut params = cfg.params.clone();
    if let Some(seed) = cfg.seed {
        let takes_seed = registry
            .param_specs(&cfg.backend_id)
            .is_some_and(|s| s.iter().any(|p| p.name == "seed"));
        if takes_seed || registry.is_external(&cfg.backend_id) {
            params.insert("seed".into(), seed as f64);
        }
    }
    let session_cfg = if registry.is_external(&cfg.backend_id) {
        SessionConfig {
            backend_id: cfg.backend_id.clone(),
            volume: VolumeRef::Path(image_path),
            ground_truth: Some(MaskRef::Path(gt_path)),
            params,
        }
    } else {
        SessionConfig {
            backend_id: cfg.backend_id.clone(),
            volume: VolumeRef::Loaded(volume),
            ground_truth: Some(MaskRef::Loaded(gt.clone())),
            params,
        }
    };

    let mut out = Vec::new();
    for &strategy in &cfg.strategies {
        let plan = build_plan(strategy, &extent).map_err(|e| e.to_string())?;
        let prompt = derive_prompt(&gt, plan.seed_z, cfg.prompt_kind, cfg.pad)
            .ok_or_else(|| format!("ground truth slice {} is empty", plan.seed_z))?;
        let mut session = registry
            .open_session(&session_cfg)
            .map_err(|e| e.to_string())?;
        let run = run_propagation(&plan, &mut session, &prompt);
        let closed = session.close();
        let (pred, _) = run.map_err(|e| format!("{strategy}: {e}"))?;
        closed.map_err(|e| format!("{strategy}: {e}"))?;
        let dice = volumetric_dice(&pred, &gt).map_err(|e| e.to_string())?;
        let props = tumor_properties(&gt, plan.seed_z);
        out.push(EvalRecord {
            patient_id: record.patient_id.clone(),
            strategy,
            prompt_kind: cfg.prompt_kind,
            dice,
            n_tumor_slices: props.n_tumor_slices,
            tumor_volume_voxels: props.tumor_volume_voxels,
            initial_area_voxels: props.initial_area_voxels,
            lesion_count: props.lesion_count,
        });
    }
    Ok(out)
}

/// Evaluates every patient; per-patient failures land in `Report::errors`.
/// The report is independent of `cfg.threads`.
pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    registry: &BackendRegistry,
    cfg: &EvalConfig,
) -> Result<Report, EvalError> {
    if !registry.contains(&cfg.backend_id) {
        return Err(EvalError::UnknownBackend(cfg.backend_id.clone()));
    }
    if cfg.strategies.is_empty() {
        return Err(EvalError::NoStrategies);
    }
    let entries = &manifest.entries;
    let threads = cfg.threads.clamp(1, entries.len().max(1));
    let mut results: Vec<Option<Result<Vec<EvalRecord>, String>>> = vec![None; entries.len()];
    std::thread::scope(|scope| {
        for (t, chunk) in results.chunks_mut(entries.len().div_ceil(threads).max(1)).enumerate() {
            let base = t * entries.len().div_ceil(threads).max(1);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(evaluate_patient(&entries[base + i], manifest, registry, cfg));
                }
            });
        }
    });

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (entry, result) in entries.iter().zip(results) {
        match result.expect("every slot filled") {
            Ok(r) => records.extend(r),
            Err(error) => errors.push(PatientError {
                patient_id: entry.patient_id.clone(),
                error,
            }),
        }
    }
    Ok(Report::build(records, &cfg.strategies, cfg.bin_width, errors)?)
}

/// CSV path written next to a JSON report.
pub fn csv_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

/// Writes the report JSON to `path` and the CSV alongside it.
pub fn write_report(report: &Report, path: &Path) -> Result<(), EvalError> {
    let write = |p: &Path, text: String| {
        std::fs::write(p, text).map_err(|source| EvalError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    write(path, report.to_json())?;
    write(&csv_path(path), report.to_csv())
}
