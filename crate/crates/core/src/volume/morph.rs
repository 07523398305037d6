//! Binary morphology with a square (Chebyshev) structuring element.

use super::SliceMask2D;

/// Sets every pixel within Chebyshev distance `r` of a foreground pixel.
pub fn dilate(m: &SliceMask2D, r: usize) -> SliceMask2D {
    if r == 0 {
        return m.clone();
    }
    // Separable: a square window is a row pass followed by a column pass.
    let (h, w) = m.dims();
    let mut rows = SliceMask2D::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            if (lo..=hi).any(|xx| m.get(y, xx)) {
                rows.set(y, x, true);
            }
        }
    }
    let mut out = SliceMask2D::empty(h, w);
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            if (lo..=hi).any(|yy| rows.get(yy, x)) {
                out.set(y, x, true);
            }
        }
    }
    out
}

/// Keeps pixels whose whole `(2r+1)²` window is foreground; pixels outside
/// the slice count as background.
pub fn erode(m: &SliceMask2D, r: usize) -> SliceMask2D {
    if r == 0 {
        return m.clone();
    }
    let (h, w) = m.dims();
    let mut rows = SliceMask2D::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            if x < r || x + r >= w {
                continue;
            }
            if (x - r..=x + r).all(|xx| m.get(y, xx)) {
                rows.set(y, x, true);
            }
        }
    }
    let mut out = SliceMask2D::empty(h, w);
    for y in 0..h {
        if y < r || y + r >= h {
            continue;
        }
        for x in 0..w {
            if (y - r..=y + r).all(|yy| rows.get(yy, x)) {
                out.set(y, x, true);
            }
        }
    }
    out
}
