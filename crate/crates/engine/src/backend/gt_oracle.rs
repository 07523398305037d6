use std::collections::BTreeMap;
use std::sync::Arc;

use slicetrack_core::volume::{dilate, erode};
use slicetrack_core::{Dims3, IntensityVolume, Mask3D, SliceMask2D, Spacing};

use super::{BackendError, ParamSpec, Segmenter, StepRequest};

/// Ground-truth replay with step-dependent corruption.
///
/// The slice at `step_index` k is the ground truth eroded by `floor(k·drift)`
/// (dilated by `floor(k·|drift|)` for negative drift), then each pixel is
/// flipped with probability `flip_prob`. Flips come from a hash of
/// `(seed, z, y, x)`, so the output depends only on the request.
#[derive(Debug, Clone)]
pub struct GtOracle {
    gt: Arc<Mask3D>,
    drift: f64,
    flip_prob: f64,
    seed: u64,
}

impl GtOracle {
    pub const PARAMS: &'static [ParamSpec] = &[
        ParamSpec {
            name: "drift",
            min: -64.0,
            max: 64.0,
            default: 0.0,
            integer: false,
        },
        ParamSpec {
            name: "flip_prob",
            min: 0.0,
            max: 1.0,
            default: 0.0,
            integer: false,
        },
        ParamSpec {
            name: "seed",
            min: 0.0,
            max: 9_007_199_254_740_992.0,
            default: 0.0,
            integer: true,
        },
    ];

    pub fn new(
        volume: &IntensityVolume,
        gt: Arc<Mask3D>,
        params: &BTreeMap<&'static str, f64>,
    ) -> Result<Self, BackendError> {
        if volume.dims() != gt.dims() {
            return Err(BackendError::Config(format!(
                "ground truth {:?} does not match volume {:?}",
                gt.dims(),
                volume.dims()
            )));
        }
        Ok(Self::from_mask(
            gt,
            params["drift"],
            params["flip_prob"],
            params["seed"] as u64,
        ))
    }

    pub fn from_mask(gt: Arc<Mask3D>, drift: f64, flip_prob: f64, seed: u64) -> Self {
        Self {
            gt,
            drift,
            flip_prob,
            seed,
        }
    }

    pub fn corrupt(&self, z: usize, step_index: usize) -> SliceMask2D {
        let truth = self.gt.slice(z);
        let radius = (step_index as f64 * self.drift.abs()).floor() as usize;
        let mut m = if self.drift >= 0.0 {
            erode(&truth, radius)
        } else {
            dilate(&truth, radius)
        };
        if self.flip_prob > 0.0 {
            let (h, w) = m.dims();
            for y in 0..h {
                for x in 0..w {
                    if unit_hash(self.seed, z, y, x) < self.flip_prob {
                        let v = m.get(y, x);
                        m.set(y, x, !v);
                    }
                }
            }
        }
        m
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform value in `[0, 1)` keyed by voxel position.
fn unit_hash(seed: u64, z: usize, y: usize, x: usize) -> f64 {
    let mut h = splitmix64(seed);
    for k in [z, y, x] {
        h = splitmix64(h ^ k as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Segmenter for GtOracle {
    fn dims(&self) -> Dims3 {
        self.gt.dims()
    }

    fn spacing(&self) -> Spacing {
        self.gt.spacing()
    }

    fn step(&mut self, req: &StepRequest) -> Result<SliceMask2D, BackendError> {
        Ok(self.corrupt(req.z, req.guidance.step_index()))
    }
}
