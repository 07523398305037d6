use super::MetricsError;
use crate::volume::Mask3D;

/// Integer terms of the Dice ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiceCounts {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl DiceCounts {
    pub fn numerator(&self) -> u64 {
        2 * self.intersection
    }

    pub fn denominator(&self) -> u64 {
        self.predicted + self.truth
    }

    /// `2|P∩G| / (|P|+|G|)`, with two empty sets scoring 1.
    pub fn dice(&self) -> f64 {
        match self.denominator() {
            0 => 1.0,
            d => self.numerator() as f64 / d as f64,
        }
    }
}

impl std::ops::Add for DiceCounts {
    type Output = DiceCounts;

    fn add(self, o: DiceCounts) -> DiceCounts {
        DiceCounts {
            intersection: self.intersection + o.intersection,
            predicted: self.predicted + o.predicted,
            truth: self.truth + o.truth,
        }
    }
}

fn count(p: &[bool], g: &[bool]) -> DiceCounts {
    p.iter()
        .zip(g)
        .fold(DiceCounts::default(), |mut c, (&a, &b)| {
            c.intersection += (a && b) as u64;
            c.predicted += a as u64;
            c.truth += b as u64;
            c
        })
}

fn check(p: &Mask3D, g: &Mask3D) -> Result<(), MetricsError> {
    if p.dims() != g.dims() {
        return Err(MetricsError::DimsMismatch(p.dims(), g.dims()));
    }
    Ok(())
}

pub fn dice_counts(p: &Mask3D, g: &Mask3D) -> Result<DiceCounts, MetricsError> {
    check(p, g)?;
    Ok(count(p.bits(), g.bits()))
}

/// Dice over every voxel of the volume at once.
pub fn volumetric_dice(p: &Mask3D, g: &Mask3D) -> Result<f64, MetricsError> {
    Ok(dice_counts(p, g)?.dice())
}

pub fn per_slice_counts(p: &Mask3D, g: &Mask3D) -> Result<Vec<DiceCounts>, MetricsError> {
    check(p, g)?;
    Ok((0..p.dims().d)
        .map(|z| count(p.slice_bits(z), g.slice_bits(z)))
        .collect())
}

/// Dice of each axial slice, indexed by `z`.
pub fn per_slice_dice(p: &Mask3D, g: &Mask3D) -> Result<Vec<f64>, MetricsError> {
    Ok(per_slice_counts(p, g)?.iter().map(DiceCounts::dice).collect())
}
