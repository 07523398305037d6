//! Uncompressed run-length encoding of slice masks.
//!
//! Runs alternate background/foreground over the row-major bit string and
//! always start with a background run, which may be zero-length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SliceMask2D;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RleError {
    #[error("length mismatch: counts sum to {sum}, dims need {expected}")]
    LengthMismatch { sum: u64, expected: u64 },
}

/// Wire form: `{"dims": [h, w], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub dims: [usize; 2],
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn decode(&self) -> Result<SliceMask2D, RleError> {
        rle_decode(&self.counts, self.dims[0], self.dims[1])
    }
}

impl From<&SliceMask2D> for RleMask {
    fn from(m: &SliceMask2D) -> Self {
        RleMask {
            dims: [m.height(), m.width()],
            counts: rle_encode(m),
        }
    }
}

pub fn rle_encode(m: &SliceMask2D) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &b in m.bits() {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    counts
}

pub fn rle_decode(counts: &[u64], h: usize, w: usize) -> Result<SliceMask2D, RleError> {
    let expected = (h * w) as u64;
    let sum = counts
        .iter()
        .try_fold(0u64, |acc, &c| acc.checked_add(c))
        .unwrap_or(u64::MAX);
    if sum != expected {
        return Err(RleError::LengthMismatch { sum, expected });
    }
    let mut bits = Vec::with_capacity(h * w);
    let mut value = false;
    for &c in counts {
        bits.extend(std::iter::repeat(value).take(c as usize));
        value = !value;
    }
    Ok(SliceMask2D::new(h, w, bits).expect("run sum checked against h*w"))
}
