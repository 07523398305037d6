use std::collections::BTreeMap;
use std::sync::Arc;

use slicetrack_core::volume::slice_components;
use slicetrack_core::{BoundingBox2D, Dims3, IntensityVolume, Prompt, SliceMask2D, Spacing};

use super::{BackendError, Guidance, ParamSpec, Segmenter, StepRequest};

/// Intensity threshold inside a region of interest.
///
/// The ROI is the prompt box, the pixels of a mask prompt, or the previous
/// mask's tight box grown by `roi_dilate`. Pixels in the ROI at or above
/// `tau` are kept, reduced to the 8-connected component under the ROI box
/// center (the largest component when the center is below threshold).
#[derive(Debug, Clone)]
pub struct ThresholdOracle {
    volume: Arc<IntensityVolume>,
    tau: f64,
    roi_dilate: usize,
}

impl ThresholdOracle {
    pub const PARAMS: &'static [ParamSpec] = &[
        ParamSpec {
            name: "tau",
            min: -1e30,
            max: 1e30,
            default: 0.5,
            integer: false,
        },
        ParamSpec {
            name: "roi_dilate",
            min: 0.0,
            max: 4096.0,
            default: 2.0,
            integer: true,
        },
    ];

    pub fn new(volume: Arc<IntensityVolume>, params: &BTreeMap<&'static str, f64>) -> Self {
        Self::with(volume, params["tau"], params["roi_dilate"] as usize)
    }

    pub fn with(volume: Arc<IntensityVolume>, tau: f64, roi_dilate: usize) -> Self {
        Self {
            volume,
            tau,
            roi_dilate,
        }
    }

    fn segment(&self, z: usize, roi: &SliceMask2D) -> SliceMask2D {
        let dims = self.volume.dims();
        let Some(bbox) = roi.bbox() else {
            return SliceMask2D::empty(dims.h, dims.w);
        };
        let pixels = self.volume.slice(z);
        let mut out = roi.clone();
        for (i, keep) in out.bits_mut().iter_mut().enumerate() {
            *keep = *keep && pixels[i] as f64 >= self.tau;
        }
        if out.is_empty() {
            return out;
        }
        let lab = slice_components(&out);
        let (cy, cx) = bbox.center();
        let chosen = match lab.labels[cy * dims.w + cx] {
            0 => {
                let sizes = lab.sizes();
                // Labels are 1-based; the first maximum wins.
                let mut best = 1u32;
                for l in 2..=lab.count as u32 {
                    if sizes[l as usize - 1] > sizes[best as usize - 1] {
                        best = l;
                    }
                }
                best
            }
            l => l,
        };
        for (i, keep) in out.bits_mut().iter_mut().enumerate() {
            *keep = lab.labels[i] == chosen;
        }
        out
    }
}

fn box_roi(b: &BoundingBox2D, h: usize, w: usize) -> SliceMask2D {
    let mut m = SliceMask2D::empty(h, w);
    for y in b.y_min..b.y_max {
        for x in b.x_min..b.x_max {
            m.set(y, x, true);
        }
    }
    m
}

impl Segmenter for ThresholdOracle {
    fn dims(&self) -> Dims3 {
        self.volume.dims()
    }

    fn spacing(&self) -> Spacing {
        self.volume.spacing()
    }

    fn step(&mut self, req: &StepRequest) -> Result<SliceMask2D, BackendError> {
        let Dims3 { h, w, .. } = self.dims();
        let roi = match &req.guidance {
            Guidance::Prompt(Prompt::Box(b)) => box_roi(b, h, w),
            Guidance::Prompt(Prompt::Mask { mask, .. }) => mask.clone(),
            Guidance::PreviousMask { mask, .. } => match mask.bbox() {
                Some(b) => box_roi(&b.expanded(self.roi_dilate, h, w), h, w),
                None => SliceMask2D::empty(h, w),
            },
        };
        Ok(self.segment(req.z, &roi))
    }
}
