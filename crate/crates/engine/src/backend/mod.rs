//! Session interface over promptable slice segmenters.
//!
//! Two deterministic in-process oracles are always registered:
//!
//! * `gt-oracle` returns the ground-truth slice, corrupted as a function of
//!   how many steps the slice is from the chain's seed.
//! * `threshold-oracle` segments by intensity threshold inside a region of
//!   interest taken from the prompt or the previous mask.
//!
//! Out-of-process model adapters speak the line-delimited JSON protocol in
//! [`protocol`] and are registered by command line.

mod external;
mod gt_oracle;
pub mod protocol;
mod threshold;

pub use external::{ExternalSegmenter, ExternalSpec};
pub use gt_oracle::GtOracle;
pub use threshold::ThresholdOracle;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use slicetrack_core::io::{load_mask, load_volume, NiftiError};
use slicetrack_core::volume::PromptKind;
use slicetrack_core::{Dims3, IntensityVolume, Mask3D, Prompt, SliceMask2D, Spacing, VolumeError};
use thiserror::Error;

pub const GT_ORACLE: &str = "gt-oracle";
pub const THRESHOLD_ORACLE: &str = "threshold-oracle";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("unreadable volume: {0}")]
    Volume(#[source] NiftiError),
    #[error("unreadable ground truth: {0}")]
    GroundTruth(#[source] NiftiError),
    #[error("{0}")]
    Config(String),
    #[error("invalid parameter {name}: {reason}")]
    Param { name: String, reason: String },
    #[error("invalid request: {0}")]
    Request(#[from] VolumeError),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Remote(String),
    #[error("closed")]
    Closed,
    #[error("adapter I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// A volume given either as a file or as an already loaded grid.
#[derive(Debug, Clone)]
pub enum VolumeRef {
    Path(PathBuf),
    Loaded(Arc<IntensityVolume>),
}

#[derive(Debug, Clone)]
pub enum MaskRef {
    Path(PathBuf),
    Loaded(Arc<Mask3D>),
}

impl VolumeRef {
    pub fn resolve(&self) -> Result<Arc<IntensityVolume>, BackendError> {
        match self {
            VolumeRef::Path(p) => load_volume(p).map(Arc::new).map_err(BackendError::Volume),
            VolumeRef::Loaded(v) => Ok(v.clone()),
        }
    }
}

impl MaskRef {
    pub fn resolve(&self) -> Result<Arc<Mask3D>, BackendError> {
        match self {
            MaskRef::Path(p) => load_mask(p).map(Arc::new).map_err(BackendError::GroundTruth),
            MaskRef::Loaded(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub backend_id: String,
    pub volume: VolumeRef,
    /// Required by `gt-oracle`; forwarded to external adapters as `gt_path`.
    pub ground_truth: Option<MaskRef>,
    pub params: BTreeMap<String, f64>,
}

impl SessionConfig {
    pub fn new(backend_id: impl Into<String>, volume: VolumeRef) -> Self {
        Self {
            backend_id: backend_id.into(),
            volume,
            ground_truth: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_ground_truth(mut self, gt: MaskRef) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }
}

/// What a step is conditioned on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guidance {
    /// First step of a run.
    Prompt(Prompt),
    /// Mask predicted on the previous slice of the chain; `step_index` counts
    /// steps since the seed slice and is at least 1.
    PreviousMask {
        mask: SliceMask2D,
        step_index: usize,
    },
}

impl Guidance {
    pub fn step_index(&self) -> usize {
        match self {
            Guidance::Prompt(_) => 0,
            Guidance::PreviousMask { step_index, .. } => *step_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRequest {
    pub z: usize,
    pub guidance: Guidance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub z: usize,
    pub mask: SliceMask2D,
    pub latency_ms: f64,
}

/// A promptable slice segmenter bound to one volume.
pub trait Segmenter: Send {
    fn dims(&self) -> Dims3;
    fn spacing(&self) -> Spacing;
    /// Predicts slice `req.z`; requests are validated before this is called.
    fn step(&mut self, req: &StepRequest) -> Result<SliceMask2D, BackendError>;
    fn close(&mut self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Declared range of one backend parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub default: f64,
    pub integer: bool,
}

impl ParamSpec {
    fn check(&self, v: f64) -> Result<(), BackendError> {
        let bad = |reason: String| BackendError::Param {
            name: self.name.to_string(),
            reason,
        };
        if !v.is_finite() || v < self.min || v > self.max {
            return Err(bad(format!("{v} outside [{}, {}]", self.min, self.max)));
        }
        if self.integer && v.fract() != 0.0 {
            return Err(bad(format!("{v} is not an integer")));
        }
        Ok(())
    }
}

/// Validates `params` against `specs` and fills in defaults.
pub fn resolve_params(
    specs: &[ParamSpec],
    params: &BTreeMap<String, f64>,
) -> Result<BTreeMap<&'static str, f64>, BackendError> {
    for name in params.keys() {
        if !specs.iter().any(|s| s.name == name) {
            return Err(BackendError::Param {
                name: name.clone(),
                reason: "unknown parameter".into(),
            });
        }
    }
    specs
        .iter()
        .map(|s| {
            let v = params.get(s.name).copied().unwrap_or(s.default);
            s.check(v).map(|_| (s.name, v))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendInfo {
    pub backend_id: String,
    pub params: Vec<ParamSpec>,
    pub external: bool,
}

/// An open session; one in-flight step at a time.
pub struct SessionHandle {
    backend_id: String,
    inner: Box<dyn Segmenter>,
    closed: bool,
}

impl std::fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHandle")
            .field("backend_id", &self.backend_id)
            .field("dims", &self.inner.dims())
            .field("closed", &self.closed)
            .finish()
    }
}

impl SessionHandle {
    pub fn new(backend_id: impl Into<String>, inner: Box<dyn Segmenter>) -> Self {
        Self {
            backend_id: backend_id.into(),
            inner,
            closed: false,
        }
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn dims(&self) -> Dims3 {
        self.inner.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.inner.spacing()
    }

    pub fn segment_step(&mut self, req: &StepRequest) -> Result<StepResult, BackendError> {
        if self.closed {
            return Err(BackendError::Closed);
        }
        let dims = self.dims();
        dims.check_z(req.z)?;
        match &req.guidance {
            Guidance::Prompt(p) => {
                p.validate(dims)?;
                if p.z() != req.z {
                    return Err(BackendError::Config(format!(
                        "prompt is on slice {} but the step targets slice {}",
                        p.z(),
                        req.z
                    )));
                }
            }
            Guidance::PreviousMask { mask, step_index } => {
                if *step_index == 0 {
                    return Err(BackendError::Config(
                        "previous-mask guidance needs step_index >= 1".into(),
                    ));
                }
                if mask.dims() != (dims.h, dims.w) {
                    return Err(VolumeError::PromptDims {
                        expected: (dims.h, dims.w),
                        actual: mask.dims(),
                    }
                    .into());
                }
            }
        }
        let start = Instant::now();
        let mask = self.inner.step(req)?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        if mask.dims() != (dims.h, dims.w) {
            return Err(BackendError::Protocol(format!(
                "backend returned a {:?} mask for {:?} slices",
                mask.dims(),
                (dims.h, dims.w)
            )));
        }
        Ok(StepResult {
            z: req.z,
            mask,
            latency_ms,
        })
    }

    pub fn close(&mut self) -> Result<(), BackendError> {
        if self.closed {
            return Err(BackendError::Closed);
        }
        self.closed = true;
        self.inner.close()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

/// Built-in oracles plus any registered external adapters.
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    external: BTreeMap<String, ExternalSpec>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_external(&mut self, id: impl Into<String>, spec: ExternalSpec) {
        self.external.insert(id.into(), spec);
    }

    pub fn contains(&self, id: &str) -> bool {
        id == GT_ORACLE || id == THRESHOLD_ORACLE || self.external.contains_key(id)
    }

    pub fn is_external(&self, id: &str) -> bool {
        self.external.contains_key(id)
    }

    pub fn param_specs(&self, id: &str) -> Option<Vec<ParamSpec>> {
        match id {
            GT_ORACLE => Some(GtOracle::PARAMS.to_vec()),
            THRESHOLD_ORACLE => Some(ThresholdOracle::PARAMS.to_vec()),
            _ => self.external.get(id).map(|_| Vec::new()),
        }
    }

    pub fn backends(&self) -> Vec<BackendInfo> {
        let mut out: Vec<BackendInfo> = [GT_ORACLE, THRESHOLD_ORACLE]
            .into_iter()
            .map(|id| BackendInfo {
                backend_id: id.to_string(),
                params: self.param_specs(id).unwrap_or_default(),
                external: false,
            })
            .collect();
        out.extend(self.external.keys().map(|id| BackendInfo {
            backend_id: id.clone(),
            params: Vec::new(),
            external: true,
        }));
        out
    }

    pub fn open_session(&self, cfg: &SessionConfig) -> Result<SessionHandle, BackendError> {
        let inner: Box<dyn Segmenter> = match cfg.backend_id.as_str() {
            GT_ORACLE => {
                let params = resolve_params(GtOracle::PARAMS, &cfg.params)?;
                let volume = cfg.volume.resolve()?;
                let gt = cfg
                    .ground_truth
                    .as_ref()
                    .ok_or_else(|| BackendError::Config("gt-oracle requires a ground-truth mask".into()))?
                    .resolve()?;
                Box::new(GtOracle::new(&volume, gt, &params)?)
            }
            THRESHOLD_ORACLE => {
                let params = resolve_params(ThresholdOracle::PARAMS, &cfg.params)?;
                Box::new(ThresholdOracle::new(cfg.volume.resolve()?, &params))
            }
            other => {
                let spec = self
                    .external
                    .get(other)
                    .ok_or_else(|| BackendError::UnknownBackend(other.to_string()))?;
                Box::new(ExternalSegmenter::spawn(spec, cfg)?)
            }
        };
        Ok(SessionHandle::new(cfg.backend_id.clone(), inner))
    }
}

/// Label for a guidance kind in traces and on the wire.
pub fn guidance_label(g: &Guidance) -> &'static str {
    match g {
        Guidance::Prompt(p) => match p.kind() {
            PromptKind::Box => "box",
            PromptKind::Mask => "mask",
        },
        Guidance::PreviousMask { .. } => "previous-mask",
    }
}
