//! Core voxel data types: intensity volumes, binary masks, slice prompts.

mod label;
mod morph;
pub mod rle;

pub use label::{connected_components, slice_components, Connectivity, Labeling};
pub use morph::{dilate, erode};
pub use rle::{rle_decode, rle_encode, RleMask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("invalid dims {0:?}: every axis must be positive")]
    InvalidDims((usize, usize, usize)),
    #[error("invalid spacing {0:?}: every component must be positive and finite")]
    InvalidSpacing((f64, f64, f64)),
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite intensity at index {0}")]
    NonFinite(usize),
    #[error("slice index {z} out of range for {d} slices")]
    SliceOutOfRange { z: usize, d: usize },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("mask prompt is empty")]
    EmptyPromptMask,
    #[error("prompt mask is {actual:?}, slices are {expected:?}")]
    PromptDims {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("no foreground")]
    NoForeground,
    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims3, Dims3),
}

/// Grid shape as `(d_slices, h_rows, w_cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims3 {
    pub fn new(d: usize, h: usize, w: usize) -> Result<Self, VolumeError> {
        if d == 0 || h == 0 || w == 0 {
            return Err(VolumeError::InvalidDims((d, h, w)));
        }
        Ok(Self { d, h, w })
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn check_z(&self, z: usize) -> Result<(), VolumeError> {
        if z < self.d {
            Ok(())
        } else {
            Err(VolumeError::SliceOutOfRange { z, d: self.d })
        }
    }
}

/// Physical voxel size in millimeters, `(sz, sy, sx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl Spacing {
    pub fn new(z: f64, y: f64, x: f64) -> Result<Self, VolumeError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(z) && ok(y) && ok(x)) {
            return Err(VolumeError::InvalidSpacing((z, y, x)));
        }
        Ok(Self { z, y, x })
    }

    pub fn unit() -> Self {
        Self {
            z: 1.0,
            y: 1.0,
            x: 1.0,
        }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.z * self.y * self.x
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::unit()
    }
}

/// A scalar 3D scan.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    dims: Dims3,
    spacing: Spacing,
    voxels: Vec<f32>,
}

impl IntensityVolume {
    pub fn new(dims: Dims3, spacing: Spacing, voxels: Vec<f32>) -> Result<Self, VolumeError> {
        if voxels.len() != dims.len() {
            return Err(VolumeError::LengthMismatch {
                expected: dims.len(),
                actual: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn zeros(dims: Dims3, spacing: Spacing) -> Self {
        Self {
            dims,
            spacing,
            voxels: vec![0.0; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.dims.index(z, y, x)]
    }

    /// Sets one voxel; non-finite values are rejected.
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) -> Result<(), VolumeError> {
        let i = self.dims.index(z, y, x);
        if !v.is_finite() {
            return Err(VolumeError::NonFinite(i));
        }
        self.voxels[i] = v;
        Ok(())
    }

    /// Pixels of axial slice `z`, row-major `(y, x)`.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }
}

/// Binary 3D grid; the prediction or the ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3D {
    dims: Dims3,
    spacing: Spacing,
    bits: Vec<bool>,
}

// Spacing is f64 but always finite, so equality is reflexive.
impl Eq for Spacing {}

impl Mask3D {
    pub fn new(dims: Dims3, spacing: Spacing, bits: Vec<bool>) -> Result<Self, VolumeError> {
        if bits.len() != dims.len() {
            return Err(VolumeError::LengthMismatch {
                expected: dims.len(),
                actual: bits.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            bits,
        })
    }

    pub fn empty(dims: Dims3, spacing: Spacing) -> Self {
        Self {
            dims,
            spacing,
            bits: vec![false; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.bits[self.dims.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, v: bool) {
        let i = self.dims.index(z, y, x);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn slice_bits(&self, z: usize) -> &[bool] {
        let n = self.dims.slice_len();
        &self.bits[z * n..(z + 1) * n]
    }

    pub fn slice(&self, z: usize) -> SliceMask2D {
        SliceMask2D {
            h: self.dims.h,
            w: self.dims.w,
            bits: self.slice_bits(z).to_vec(),
        }
    }

    pub fn slice_area(&self, z: usize) -> usize {
        self.slice_bits(z).iter().filter(|&&b| b).count()
    }

    pub fn set_slice(&mut self, z: usize, m: &SliceMask2D) -> Result<(), VolumeError> {
        self.dims.check_z(z)?;
        if m.dims() != (self.dims.h, self.dims.w) {
            return Err(VolumeError::PromptDims {
                expected: (self.dims.h, self.dims.w),
                actual: m.dims(),
            });
        }
        let n = self.dims.slice_len();
        self.bits[z * n..(z + 1) * n].copy_from_slice(&m.bits);
        Ok(())
    }

    /// Copy of `self` with every slice outside `[z_lo, z_hi]` cleared.
    pub fn restricted_to(&self, z_lo: usize, z_hi: usize) -> Mask3D {
        let mut out = self.clone();
        let n = self.dims.slice_len();
        for z in 0..self.dims.d {
            if z < z_lo || z > z_hi {
                out.bits[z * n..(z + 1) * n].fill(false);
            }
        }
        out
    }

    /// Inclusive range of slices carrying foreground, or `None` when empty.
    pub fn foreground_slices(&self) -> Option<(usize, usize)> {
        let mut first = None;
        let mut last = 0;
        for z in 0..self.dims.d {
            if self.slice_bits(z).iter().any(|&b| b) {
                first.get_or_insert(z);
                last = z;
            }
        }
        first.map(|f| (f, last))
    }
}

/// Binary mask of one axial slice, row-major `(y, x)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SliceMask2D {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl SliceMask2D {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self, VolumeError> {
        if bits.len() != h * w {
            return Err(VolumeError::LengthMismatch {
                expected: h * w,
                actual: bits.len(),
            });
        }
        Ok(Self { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    /// Builds a mask from `(y, x)` foreground coordinates.
    pub fn from_pixels(h: usize, w: usize, pixels: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(h, w);
        for &(y, x) in pixels {
            m.set(y, x, true);
        }
        m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.w + x] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight half-open box over the foreground, `z` left at 0.
    pub fn bbox(&self) -> Option<BoundingBox2D> {
        bbox_from_slice_mask(self)
    }
}

/// Axis-aligned box on slice `z`; `min` bounds inclusive, `max` bounds exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox2D {
    pub z: usize,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox2D {
    pub fn width(&self) -> usize {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> usize {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y_min..self.y_max).contains(&y) && (self.x_min..self.x_max).contains(&x)
    }

    pub fn with_z(mut self, z: usize) -> Self {
        self.z = z;
        self
    }

    /// Grows the box by `r` on every side, clipped to an `h × w` slice.
    pub fn expanded(&self, r: usize, h: usize, w: usize) -> Self {
        Self {
            z: self.z,
            x_min: self.x_min.saturating_sub(r),
            y_min: self.y_min.saturating_sub(r),
            x_max: (self.x_max + r).min(w),
            y_max: (self.y_max + r).min(h),
        }
    }

    /// Center pixel `(y, x)`, rounding toward the min corner.
    pub fn center(&self) -> (usize, usize) {
        (
            (self.y_min + self.y_max - 1) / 2,
            (self.x_min + self.x_max - 1) / 2,
        )
    }

    pub fn validate(&self, dims: Dims3) -> Result<(), VolumeError> {
        dims.check_z(self.z)?;
        if self.x_min >= self.x_max || self.x_max > dims.w {
            return Err(VolumeError::InvalidBox(format!(
                "x range [{}, {}) invalid for width {}",
                self.x_min, self.x_max, dims.w
            )));
        }
        if self.y_min >= self.y_max || self.y_max > dims.h {
            return Err(VolumeError::InvalidBox(format!(
                "y range [{}, {}) invalid for height {}",
                self.y_min, self.y_max, dims.h
            )));
        }
        Ok(())
    }
}

/// The single-slice user input that seeds segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt {
    Box(BoundingBox2D),
    Mask { z: usize, mask: SliceMask2D },
}

impl Prompt {
    pub fn z(&self) -> usize {
        match self {
            Prompt::Box(b) => b.z,
            Prompt::Mask { z, .. } => *z,
        }
    }

    pub fn kind(&self) -> PromptKind {
        match self {
            Prompt::Box(_) => PromptKind::Box,
            Prompt::Mask { .. } => PromptKind::Mask,
        }
    }

    /// Checks the prompt geometry against a volume of shape `dims`.
    pub fn validate(&self, dims: Dims3) -> Result<(), VolumeError> {
        match self {
            Prompt::Box(b) => b.validate(dims),
            Prompt::Mask { z, mask } => {
                dims.check_z(*z)?;
                if mask.dims() != (dims.h, dims.w) {
                    return Err(VolumeError::PromptDims {
                        expected: (dims.h, dims.w),
                        actual: mask.dims(),
                    });
                }
                if mask.is_empty() {
                    return Err(VolumeError::EmptyPromptMask);
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Box,
    Mask,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Box => "box",
            PromptKind::Mask => "mask",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box" => Ok(PromptKind::Box),
            "mask" => Ok(PromptKind::Mask),
            other => Err(format!("unknown prompt kind {other:?} (expected box or mask)")),
        }
    }
}

/// How the seed slice of a tumor is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterRule {
    /// `floor((z_first + z_last) / 2)`.
    #[default]
    Midpoint,
    /// Slice with the largest foreground area, ties to the smaller index.
    MaxArea,
}

/// Inclusive slice range holding ground-truth foreground, plus its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TumorExtent {
    pub z_first: usize,
    pub z_last: usize,
    pub z_center: usize,
}

impl TumorExtent {
    pub fn span(&self) -> usize {
        self.z_last - self.z_first + 1
    }
}

pub fn bbox_from_slice_mask(m: &SliceMask2D) -> Option<BoundingBox2D> {
    let mut b: Option<BoundingBox2D> = None;
    for y in 0..m.h {
        for x in 0..m.w {
            if !m.get(y, x) {
                continue;
            }
            match b.as_mut() {
                None => {
                    b = Some(BoundingBox2D {
                        z: 0,
                        x_min: x,
                        y_min: y,
                        x_max: x + 1,
                        y_max: y + 1,
                    })
                }
                Some(b) => {
                    b.x_min = b.x_min.min(x);
                    b.x_max = b.x_max.max(x + 1);
                    b.y_min = b.y_min.min(y);
                    b.y_max = b.y_max.max(y + 1);
                }
            }
        }
    }
    b
}

pub fn tumor_extent(g: &Mask3D, rule: CenterRule) -> Result<TumorExtent, VolumeError> {
    let (z_first, z_last) = g.foreground_slices().ok_or(VolumeError::NoForeground)?;
    let z_center = match rule {
        CenterRule::Midpoint => (z_first + z_last) / 2,
        CenterRule::MaxArea => {
            let mut best = z_first;
            let mut best_area = 0;
            for z in z_first..=z_last {
                let a = g.slice_area(z);
                if a > best_area {
                    best = z;
                    best_area = a;
                }
            }
            best
        }
    };
    Ok(TumorExtent {
        z_first,
        z_last,
        z_center,
    })
}
