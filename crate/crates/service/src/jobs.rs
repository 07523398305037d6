//! Propagation jobs: FIFO queues with one worker thread per backend.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use slicetrack_core::mesh::{extract_surface, obj_string};
use slicetrack_core::metrics::{dice_counts, per_slice_dice, tumor_properties, TumorProperties};
use slicetrack_core::volume::RleMask;
use slicetrack_core::{BoundingBox2D, Mask3D, Prompt, Strategy, TumorExtent};
use slicetrack_engine::backend::{BackendRegistry, MaskRef, SessionConfig, VolumeRef};
use slicetrack_engine::propagation::{
    run_interactive_with_progress, run_propagation_with_progress, PropagationTrace,
};
use slicetrack_engine::{build_plan, PropagationPlan};

use crate::error::ApiError;
use crate::store::{VolumeEntry, VolumeStore};

/// Prompt as sent by clients and stored in prompt files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PromptBody {
    Box {
        z: usize,
        x_min: usize,
        y_min: usize,
        x_max: usize,
        y_max: usize,
    },
    Mask {
        z: usize,
        rle: RleMask,
    },
}

impl PromptBody {
    pub fn to_prompt(&self) -> Result<Prompt, ApiError> {
        Ok(match self {
            &PromptBody::Box {
                z,
                x_min,
                y_min,
                x_max,
                y_max,
            } => Prompt::Box(BoundingBox2D {
                z,
                x_min,
                y_min,
                x_max,
                y_max,
            }),
            PromptBody::Mask { z, rle } => Prompt::Mask {
                z: *z,
                mask: rle
                    .decode()
                    .map_err(|e| ApiError::invalid("prompt.rle", e.to_string()))?,
            },
        })
    }

    pub fn from_prompt(p: &Prompt) -> Self {
        match p {
            Prompt::Box(b) => PromptBody::Box {
                z: b.z,
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            },
            Prompt::Mask { z, mask } => PromptBody::Mask {
                z: *z,
                rle: RleMask::from(mask),
            },
        }
    }
}

/// A fixed strategy or open-ended interactive propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobMode {
    BottomToTop,
    TopToBottom,
    CenterOutward,
    Interactive,
}

impl JobMode {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            JobMode::BottomToTop => Some(Strategy::BottomToTop),
            JobMode::TopToBottom => Some(Strategy::TopToBottom),
            JobMode::CenterOutward => Some(Strategy::CenterOutward),
            JobMode::Interactive => None,
        }
    }
}

impl std::str::FromStr for JobMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "interactive" {
            return Ok(JobMode::Interactive);
        }
        Ok(match s.parse::<Strategy>()? {
            Strategy::BottomToTop => JobMode::BottomToTop,
            Strategy::TopToBottom => JobMode::TopToBottom,
            Strategy::CenterOutward => JobMode::CenterOutward,
        })
    }
}

/// Plan for a prompt without a known tumor extent. Chains run from the
/// prompt slice to the ends of `z_range` (the whole volume by default):
/// upward for bottom-to-top, downward for top-to-bottom, both ways for
/// center-outward.
pub fn plan_from_prompt(
    strategy: Strategy,
    prompt_z: usize,
    depth: usize,
    z_range: Option<(usize, usize)>,
) -> Result<PropagationPlan, ApiError> {
    let (lo, hi) = z_range.unwrap_or((0, depth - 1));
    if lo > hi || hi >= depth {
        return Err(ApiError::invalid(
            "z_range",
            format!("z_range [{lo}, {hi}] is not inside [0, {}]", depth - 1),
        ));
    }
    if !(lo..=hi).contains(&prompt_z) {
        return Err(ApiError::invalid(
            "prompt.z",
            format!("prompt slice {prompt_z} is outside z_range [{lo}, {hi}]"),
        ));
    }
    let (z_first, z_last) = match strategy {
        Strategy::BottomToTop => (prompt_z, hi),
        Strategy::TopToBottom => (lo, prompt_z),
        Strategy::CenterOutward => (lo, hi),
    };
    let extent = TumorExtent {
        z_first,
        z_last,
        z_center: prompt_z,
    };
    build_plan(strategy, &extent).map_err(|e| ApiError::invalid("z_range", e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub volume_id: String,
    pub prompt: PromptBody,
    #[serde(alias = "strategy")]
    pub mode: JobMode,
    pub backend_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub z_range: Option<(usize, usize)>,
    #[serde(default = "default_stop")]
    pub stop_after_empty: usize,
}

fn default_stop() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub slices_done: usize,
    pub slices_total: usize,
}

#[derive(Debug)]
pub struct JobResult {
    pub mask: Arc<Mask3D>,
    pub trace: PropagationTrace,
    mesh_obj: OnceLock<Arc<String>>,
}

impl JobResult {
    /// OBJ surface of the predicted mask, built on first use.
    pub fn mesh_obj(&self) -> Arc<String> {
        self.mesh_obj
            .get_or_init(|| {
                let mesh = extract_surface(&self.mask, self.mask.spacing());
                Arc::new(obj_string(&mesh, None))
            })
            .clone()
    }

    pub fn mesh_is_cached(&self) -> bool {
        self.mesh_obj.get().is_some()
    }
}

#[derive(Debug, Clone)]
struct Job {
    id: String,
    volume_id: String,
    prompt: Prompt,
    mode: JobMode,
    backend_id: String,
    params: BTreeMap<String, f64>,
    plan: Option<PropagationPlan>,
    stop_after_empty: usize,
    state: JobState,
    progress: Progress,
    error: Option<String>,
    result: Option<Arc<JobResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRefs {
    pub mask: String,
    pub trace: String,
    pub mesh: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobView {
    pub job_id: String,
    pub volume_id: String,
    pub backend_id: String,
    pub mode: JobMode,
    pub prompt: PromptBody,
    pub state: JobState,
    pub progress: Progress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultRefs>,
}

/// Predicted slices as RLE, nonempty slices only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub dims: [usize; 3],
    pub slices: Vec<SliceRle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRle {
    pub z: usize,
    pub rle: RleMask,
}

impl MaskSet {
    pub fn from_mask(m: &Mask3D) -> Self {
        MaskSet {
            dims: m.dims().as_array(),
            slices: (0..m.dims().d)
                .filter(|&z| m.slice_area(z) > 0)
                .map(|z| SliceRle {
                    z,
                    rle: RleMask::from(&m.slice(z)),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobMetrics {
    pub dice: f64,
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
    pub per_slice_dice: Vec<f64>,
    pub properties: TumorProperties,
}

/// Shared state behind the HTTP API.
#[derive(Debug)]
pub struct Service {
    pub volumes: VolumeStore,
    pub registry: BackendRegistry,
    jobs: RwLock<BTreeMap<String, Job>>,
    queues: Mutex<HashMap<String, Sender<String>>>,
    next_job: AtomicU64,
}

impl Service {
    pub fn new(volumes: VolumeStore, registry: BackendRegistry) -> Arc<Self> {
        Arc::new(Self {
            volumes,
            registry,
            jobs: RwLock::new(BTreeMap::new()),
            queues: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn submit(self: &Arc<Self>, req: JobRequest) -> Result<String, ApiError> {
        let entry = self.volumes.get(&req.volume_id)?;
        if !self.registry.contains(&req.backend_id) {
            return Err(ApiError::invalid(
                "backend_id",
                format!("unknown backend {:?}", req.backend_id),
            ));
        }
        let prompt = req.prompt.to_prompt()?;
        let dims = entry.volume.dims();
        if prompt.z() >= dims.d {
            return Err(ApiError::invalid(
                "prompt.z",
                format!("slice index {} out of range for {} slices", prompt.z(), dims.d),
            ));
        }
        prompt
            .validate(dims)
            .map_err(|e| ApiError::invalid("prompt", e.to_string()))?;
        if req.stop_after_empty == 0 {
            return Err(ApiError::invalid("stop_after_empty", "must be at least 1"));
        }
        let plan = match req.mode.strategy() {
            Some(s) => Some(plan_from_prompt(s, prompt.z(), dims.d, req.z_range)?),
            None => None,
        };
        let slices_total = plan.as_ref().map_or(dims.d, PropagationPlan::slices_total);

        let id = format!("job-{}", self.next_job.fetch_add(1, Ordering::SeqCst));
        let job = Job {
            id: id.clone(),
            volume_id: req.volume_id,
            prompt,
            mode: req.mode,
            backend_id: req.backend_id.clone(),
            params: req.params,
            plan,
            stop_after_empty: req.stop_after_empty,
            state: JobState::Queued,
            progress: Progress {
                slices_done: 0,
                slices_total,
            },
            error: None,
            result: None,
        };
        self.jobs.write().unwrap().insert(id.clone(), job);
        self.enqueue(&req.backend_id, id.clone());
        Ok(id)
    }

    fn enqueue(self: &Arc<Self>, backend: &str, job_id: String) {
        let mut queues = self.queues.lock().unwrap();
        let tx = queues.entry(backend.to_string()).or_insert_with(|| {
            let (tx, rx) = mpsc::channel::<String>();
            let svc = Arc::downgrade(self);
            std::thread::Builder::new()
                .name(format!("worker-{backend}"))
                .spawn(move || {
                    for id in rx {
                        let Some(svc) = svc.upgrade() else { break };
                        svc.run_job(&id);
                    }
                })
                .expect("spawn worker");
            tx
        });
        tx.send(job_id).expect("worker alive");
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.write().unwrap().get_mut(id) {
            f(job);
        }
    }

    fn run_job(&self, id: &str) {
        let Some(job) = self.jobs.read().unwrap().get(id).cloned() else {
            return;
        };
        self.update(id, |j| j.state = JobState::Running);
        match self.execute(&job) {
            Ok((mask, trace)) => self.update(id, |j| {
                if j.plan.is_none() {
                    j.progress.slices_total = trace.entries.len();
                }
                j.progress.slices_done = j.progress.slices_total;
                j.result = Some(Arc::new(JobResult {
                    mask: Arc::new(mask),
                    trace,
                    mesh_obj: OnceLock::new(),
                }));
                j.state = JobState::Done;
            }),
            Err(e) => self.update(id, |j| {
                j.error = Some(e);
                j.state = JobState::Failed;
            }),
        }
    }

    fn execute(&self, job: &Job) -> Result<(Mask3D, PropagationTrace), String> {
        let entry = self.volumes.get(&job.volume_id).map_err(|e| e.message)?;
        let cfg = session_config(&self.registry, &job.backend_id, &entry, job.params.clone());
        let mut session = self.registry.open_session(&cfg).map_err(|e| e.to_string())?;
        let mut progress = |done: usize, _total: usize| {
            self.update(&job.id, |j| {
                j.progress.slices_done = j.progress.slices_done.max(done.min(j.progress.slices_total));
            })
        };
        let run = match &job.plan {
            Some(plan) => run_propagation_with_progress(plan, &mut session, &job.prompt, &mut progress),
            None => run_interactive_with_progress(
                &mut session,
                &job.prompt,
                job.stop_after_empty,
                &mut progress,
            ),
        };
        let closed = session.close();
        let out = run.map_err(|e| e.to_string())?;
        closed.map_err(|e| e.to_string())?;
        Ok(out)
    }

    pub fn view(&self, id: &str) -> Result<JobView, ApiError> {
        let jobs = self.jobs.read().unwrap();
        let j = jobs
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))?;
        let has_gt = self
            .volumes
            .get(&j.volume_id)
            .is_ok_and(|e| e.ground_truth.is_some());
        Ok(JobView {
            job_id: j.id.clone(),
            volume_id: j.volume_id.clone(),
            backend_id: j.backend_id.clone(),
            mode: j.mode,
            prompt: PromptBody::from_prompt(&j.prompt),
            state: j.state,
            progress: j.progress,
            error: j.error.clone(),
            result: (j.state == JobState::Done).then(|| ResultRefs {
                mask: format!("/jobs/{id}/mask"),
                trace: format!("/jobs/{id}/trace"),
                mesh: format!("/jobs/{id}/mesh.obj"),
                metrics: has_gt.then(|| format!("/jobs/{id}/metrics")),
            }),
        })
    }

    pub fn result(&self, id: &str) -> Result<Arc<JobResult>, ApiError> {
        let jobs = self.jobs.read().unwrap();
        let j = jobs
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))?;
        j.result.clone().ok_or_else(|| {
            ApiError::not_ready(format!("job {id} is {:?}; results need state done", j.state))
        })
    }

    pub fn metrics(&self, id: &str) -> Result<JobMetrics, ApiError> {
        let result = self.result(id)?;
        let (volume_id, prompt_z) = {
            let jobs = self.jobs.read().unwrap();
            let j = &jobs[id];
            (j.volume_id.clone(), j.prompt.z())
        };
        let entry = self.volumes.get(&volume_id)?;
        let gt = entry.ground_truth.as_ref().ok_or_else(ApiError::no_ground_truth)?;
        job_metrics(&result.mask, &gt.mask, prompt_z)
    }
}

pub fn job_metrics(pred: &Mask3D, gt: &Mask3D, prompt_z: usize) -> Result<JobMetrics, ApiError> {
    let c = dice_counts(pred, gt).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(JobMetrics {
        dice: c.dice(),
        intersection: c.intersection,
        predicted: c.predicted,
        truth: c.truth,
        per_slice_dice: per_slice_dice(pred, gt).map_err(|e| ApiError::internal(e.to_string()))?,
        properties: tumor_properties(gt, prompt_z),
    })
}

/// Session settings for a registered volume: in-process backends share the
/// loaded grids, external adapters get file paths.
pub fn session_config(
    registry: &BackendRegistry,
    backend_id: &str,
    entry: &VolumeEntry,
    params: BTreeMap<String, f64>,
) -> SessionConfig {
    let external = registry.is_external(backend_id);
    SessionConfig {
        backend_id: backend_id.to_string(),
        volume: if external {
            VolumeRef::Path(entry.path.clone())
        } else {
            VolumeRef::Loaded(entry.volume.clone())
        },
        ground_truth: entry.ground_truth.as_ref().map(|g| {
            if external {
                MaskRef::Path(g.path.clone())
            } else {
                MaskRef::Loaded(g.mask.clone())
            }
        }),
        params,
    }
}
