//! Connected-component labeling of binary volumes.

use super::{Dims3, Mask3D, SliceMask2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl TryFrom<u32> for Connectivity {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

/// Component labels in `(z, y, x)` order; 0 is background, components are
/// numbered from 1 in order of their first voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub count: usize,
    pub dims: Dims3,
    pub labels: Vec<u32>,
}

impl Labeling {
    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

fn offsets(conn: Connectivity) -> Vec<(isize, isize, isize)> {
    let mut out = Vec::with_capacity(26);
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let manhattan = dz.abs() + dy.abs() + dx.abs();
                let keep = match conn {
                    Connectivity::Six => manhattan == 1,
                    Connectivity::TwentySix => manhattan > 0,
                };
                if keep {
                    out.push((dz, dy, dx));
                }
            }
        }
    }
    out
}

fn label_bits(dims: Dims3, bits: &[bool], conn: Connectivity) -> Labeling {
    let neighbors = offsets(conn);
    let mut labels = vec![0u32; dims.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let z = (i / dims.slice_len()) as isize;
            let y = ((i / dims.w) % dims.h) as isize;
            let x = (i % dims.w) as isize;
            for &(dz, dy, dx) in &neighbors {
                let (nz, ny, nx) = (z + dz, y + dy, x + dx);
                if nz < 0
                    || ny < 0
                    || nx < 0
                    || nz >= dims.d as isize
                    || ny >= dims.h as isize
                    || nx >= dims.w as isize
                {
                    continue;
                }
                let j = dims.index(nz as usize, ny as usize, nx as usize);
                if bits[j] && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            }
        }
    }
    Labeling {
        count: count as usize,
        dims,
        labels,
    }
}

pub fn connected_components(m: &Mask3D, conn: Connectivity) -> Labeling {
    label_bits(m.dims(), m.bits(), conn)
}

/// 8-connected labeling of a single slice.
pub fn slice_components(m: &SliceMask2D) -> Labeling {
    let (h, w) = m.dims();
    let dims = Dims3 { d: 1, h, w };
    label_bits(dims, m.bits(), Connectivity::TwentySix)
}
