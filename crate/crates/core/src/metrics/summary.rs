use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalRecord, MetricsError};
use crate::Strategy;

/// Linear interpolation between order statistics at `pos = q·(n−1)`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreStats {
    pub fn from_scores(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        Some(ScoreStats {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: quantile_linear(&s, 0.5),
            q1: quantile_linear(&s, 0.25),
            q3: quantile_linear(&s, 0.75),
            min: s[0],
            max: s[s.len() - 1],
        })
    }
}

/// Fixed-width bins over `[0, 1]`; bin `i` is `[i·w, (i+1)·w)` and the last
/// bin also holds 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

fn bin_count(bin_width: f64) -> Result<usize, MetricsError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(MetricsError::InvalidBinWidth(bin_width));
    }
    let n = (1.0 / bin_width).round();
    if (n * bin_width - 1.0).abs() > 1e-9 {
        return Err(MetricsError::InvalidBinWidth(bin_width));
    }
    Ok(n as usize)
}

pub fn histogram(scores: &[f64], bin_width: f64) -> Result<Histogram, MetricsError> {
    let n = bin_count(bin_width)?;
    let edge = |i: usize| i as f64 / n as f64;
    let mut counts = vec![0u64; n];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(MetricsError::ScoreOutOfRange(s));
        }
        let mut i = ((s * n as f64).floor() as usize).min(n - 1);
        // Edges are i/n, so correct any rounding in the product above.
        while i + 1 < n && s >= edge(i + 1) {
            i += 1;
        }
        while i > 0 && s < edge(i) {
            i -= 1;
        }
        counts[i] += 1;
    }
    Ok(Histogram { bin_width, counts })
}

/// Per-strategy distribution of Dice scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    #[serde(flatten)]
    pub stats: ScoreStats,
    pub win_count: usize,
    pub histogram: Histogram,
}

pub fn summarize(
    scores: &BTreeMap<Strategy, Vec<f64>>,
    bin_width: f64,
) -> Result<BTreeMap<Strategy, StrategySummary>, MetricsError> {
    scores
        .iter()
        .map(|(&strategy, s)| {
            let stats = ScoreStats::from_scores(s)
                .ok_or_else(|| MetricsError::EmptyScores(strategy.to_string()))?;
            Ok((
                strategy,
                StrategySummary {
                    stats,
                    win_count: 0,
                    histogram: histogram(s, bin_width)?,
                },
            ))
        })
        .collect()
}

/// Best-strategy counts across patients.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinTable {
    pub wins: BTreeMap<Strategy, usize>,
    /// Patients whose best score is shared by more than one strategy.
    pub tie_count: usize,
    pub patients: usize,
}

/// Counts, per patient, which strategy scored highest.
///
/// Exact ties go to the strategy with the lowest [`Strategy::tie_priority`]
/// and are also counted in `tie_count`.
pub fn win_counts(records: &[EvalRecord], strategies: &[Strategy]) -> Result<WinTable, MetricsError> {
    let mut by_patient: BTreeMap<&str, BTreeMap<Strategy, f64>> = BTreeMap::new();
    for r in records {
        let slot = by_patient.entry(r.patient_id.as_str()).or_default();
        if slot.insert(r.strategy, r.dice).is_some() {
            return Err(MetricsError::DuplicateRecord {
                patient: r.patient_id.clone(),
                strategy: r.strategy.to_string(),
            });
        }
    }
    let mut table = WinTable {
        wins: strategies.iter().map(|&s| (s, 0)).collect(),
        tie_count: 0,
        patients: by_patient.len(),
    };
    for (patient, scores) in &by_patient {
        let mut best: Option<(Strategy, f64)> = None;
        let mut tied = false;
        for &s in strategies {
            let d = *scores.get(&s).ok_or_else(|| MetricsError::MissingStrategy {
                patient: patient.to_string(),
                strategy: s.to_string(),
            })?;
            match best {
                None => best = Some((s, d)),
                Some((b, bd)) => {
                    if d > bd {
                        best = Some((s, d));
                        tied = false;
                    } else if d == bd {
                        tied = true;
                        if s.tie_priority() < b.tie_priority() {
                            best = Some((s, d));
                        }
                    }
                }
            }
        }
        if let Some((s, _)) = best {
            *table.wins.get_mut(&s).expect("strategy listed") += 1;
            table.tie_count += tied as usize;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::PromptKind;
    use crate::Strategy;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn rec(patient: &str, strategy: Strategy, dice: f64) -> EvalRecord {
        EvalRecord {
            patient_id: patient.into(),
            strategy,
            prompt_kind: PromptKind::Box,
            dice,
            n_tumor_slices: 1,
            tumor_volume_voxels: 1,
            initial_area_voxels: 1,
            lesion_count: 1,
        }
    }

    #[test]
    fn three_point_summary() {
        let st = ScoreStats::from_scores(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!((st.median, st.mean), (0.5, 0.5));
        let h = histogram(&[0.0, 0.5, 1.0], 0.05).unwrap();
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 3);
    }

    #[test]
    fn repeated_score_quartiles() {
        let st = ScoreStats::from_scores(&[0.3; 7]).unwrap();
        assert_eq!((st.q1, st.median, st.q3), (0.3, 0.3, 0.3));
    }

    #[test]
    fn interpolated_quartiles() {
        let st = ScoreStats::from_scores(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert!((st.median - 0.5).abs() < 1e-12);
        assert!((st.q1 - 0.35).abs() < 1e-12);
        assert!((st.q3 - 0.65).abs() < 1e-12);
    }

    #[test]
    fn bin_edges_are_exact() {
        let h = histogram(&[0.15, 0.1499, 0.95, 0.9999], 0.05).unwrap();
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.counts[2], 1);
        assert_eq!(h.counts[19], 2);
    }

    #[test]
    fn bad_bin_width() {
        assert!(histogram(&[], 0.3).is_err());
        assert!(histogram(&[], 0.0).is_err());
        assert!(histogram(&[1.5], 0.1).is_err());
    }

    #[test]
    fn empty_strategy_errors() {
        let mut m = BTreeMap::new();
        m.insert(Strategy::TopToBottom, vec![]);
        assert!(matches!(summarize(&m, 0.05), Err(MetricsError::EmptyScores(_))));
    }

    #[test]
    fn distinct_winners() {
        let recs = vec![
            rec("a", Strategy::BottomToTop, 0.9),
            rec("a", Strategy::TopToBottom, 0.1),
            rec("a", Strategy::CenterOutward, 0.2),
            rec("b", Strategy::BottomToTop, 0.1),
            rec("b", Strategy::TopToBottom, 0.9),
            rec("b", Strategy::CenterOutward, 0.2),
            rec("c", Strategy::BottomToTop, 0.1),
            rec("c", Strategy::TopToBottom, 0.2),
            rec("c", Strategy::CenterOutward, 0.9),
        ];
        let t = win_counts(&recs, &Strategy::ALL).unwrap();
        assert!(t.wins.values().all(|&w| w == 1));
        assert_eq!(t.tie_count, 0);
        assert_eq!(t.patients, 3);
    }

    #[test]
    fn three_way_tie_goes_to_center() {
        let recs: Vec<_> = Strategy::ALL.iter().map(|&s| rec("p", s, 0.7)).collect();
        let t = win_counts(&recs, &Strategy::ALL).unwrap();
        assert_eq!(t.wins[&Strategy::CenterOutward], 1);
        assert_eq!(t.wins[&Strategy::BottomToTop], 0);
        assert_eq!(t.tie_count, 1);
    }

    #[test]
    fn empty_input() {
        let t = win_counts(&[], &Strategy::ALL).unwrap();
        assert_eq!(t.patients, 0);
        assert!(t.wins.values().all(|&w| w == 0));
    }

    #[test]
    fn missing_strategy() {
        let recs = vec![rec("p", Strategy::BottomToTop, 0.5)];
        assert!(matches!(
            win_counts(&recs, &Strategy::ALL),
            Err(MetricsError::MissingStrategy { .. })
        ));
    }

    proptest! {
        #[test]
        fn wins_sum_to_patients(scores in proptest::collection::vec((0u8..4, 0u8..4, 0u8..4), 0..30)) {
            let mut recs = Vec::new();
            for (i, (a, b, c)) in scores.iter().enumerate() {
                let id = format!("p{i}");
                recs.push(rec(&id, Strategy::BottomToTop, *a as f64 / 3.0));
                recs.push(rec(&id, Strategy::TopToBottom, *b as f64 / 3.0));
                recs.push(rec(&id, Strategy::CenterOutward, *c as f64 / 3.0));
            }
            let t = win_counts(&recs, &Strategy::ALL).unwrap();
            prop_assert_eq!(t.wins.values().sum::<usize>(), scores.len());
        }

        #[test]
        fn histogram_counts_everything(s in proptest::collection::vec(0.0f64..=1.0, 0..100)) {
            let h = histogram(&s, 0.05).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>(), s.len() as u64);
        }
    }
}
