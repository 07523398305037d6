/// Nearest-rank percentile of an already sorted, non-empty slice.
pub fn percentile_nearest_rank(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Maps pixel intensities to display bytes between the `p_lo` and `p_hi`
/// percentiles.
///
/// Values clamp to the window and map linearly onto `0..=255` with
/// round-half-up. A degenerate window (`hi == lo`) produces all zeros.
pub fn window_to_u8(pixels: &[f32], p_lo: f64, p_hi: f64) -> Vec<u8> {
    assert!(
        (0.0..100.0).contains(&p_lo) && p_lo < p_hi && p_hi <= 100.0,
        "percentiles must satisfy 0 <= p_lo < p_hi <= 100"
    );
    if pixels.is_empty() {
        return Vec::new();
    }
    let mut sorted = pixels.to_vec();
    sorted.sort_by(f32::total_cmp);
    let lo = percentile_nearest_rank(&sorted, p_lo) as f64;
    let hi = percentile_nearest_rank(&sorted, p_hi) as f64;
    if hi <= lo {
        return vec![0; pixels.len()];
    }
    pixels
        .iter()
        .map(|&v| {
            let v = (v as f64).clamp(lo, hi);
            ((v - lo) * 255.0 / (hi - lo) + 0.5).floor().min(255.0) as u8
        })
        .collect()
}
