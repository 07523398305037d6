//! Evaluation report: per-patient records plus the derived summaries, in a
//! byte-stable JSON layout and a fixed-column CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ols_fit, summarize, win_counts, Histogram, MetricsError, RegressionFit, ScoreStats};
use crate::volume::PromptKind;
use crate::Strategy;

/// One patient evaluated with one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub patient_id: String,
    pub strategy: Strategy,
    pub prompt_kind: PromptKind,
    pub dice: f64,
    pub n_tumor_slices: usize,
    pub tumor_volume_voxels: usize,
    pub initial_area_voxels: usize,
    pub lesion_count: usize,
}

pub const CSV_COLUMNS: [&str; 8] = [
    "patient_id",
    "strategy",
    "prompt_kind",
    "dice",
    "n_tumor_slices",
    "tumor_volume_voxels",
    "initial_area_voxels",
    "lesion_count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    #[serde(flatten)]
    pub stats: ScoreStats,
    pub win_count: usize,
}

/// Dice (x) against each tumor descriptor (y); `None` when not fittable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub strategy: Option<Strategy>,
    pub n_slices: Option<RegressionFit>,
    pub volume: Option<RegressionFit>,
    pub initial_area: Option<RegressionFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientError {
    pub patient_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<EvalRecord>,
    pub summaries: BTreeMap<Strategy, SummaryEntry>,
    pub tie_count: usize,
    pub fits: Fits,
    pub histograms: BTreeMap<Strategy, Histogram>,
    pub errors: Vec<PatientError>,
}

impl Report {
    /// Records are sorted by patient id, then strategy, before anything is
    /// derived, so the output does not depend on evaluation order.
    pub fn build(
        mut records: Vec<EvalRecord>,
        strategies: &[Strategy],
        bin_width: f64,
        mut errors: Vec<PatientError>,
    ) -> Result<Report, MetricsError> {
        records.sort_by(|a, b| {
            (a.patient_id.as_str(), a.strategy).cmp(&(b.patient_id.as_str(), b.strategy))
        });
        errors.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

        let mut scores: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
        for r in &records {
            scores.entry(r.strategy).or_default().push(r.dice);
        }
        let wins = win_counts(&records, strategies)?;
        let per_strategy = summarize(&scores, bin_width)?;
        let mut summaries = BTreeMap::new();
        let mut histograms = BTreeMap::new();
        for (s, summary) in per_strategy {
            summaries.insert(
                s,
                SummaryEntry {
                    stats: summary.stats,
                    win_count: wins.wins.get(&s).copied().unwrap_or(0),
                },
            );
            histograms.insert(s, summary.histogram);
        }

        let fit_strategy = if strategies.contains(&Strategy::CenterOutward) {
            Some(Strategy::CenterOutward)
        } else {
            strategies.first().copied()
        };
        let fit = |y: fn(&EvalRecord) -> usize| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| Some(r.strategy) == fit_strategy)
                .map(|r| (r.dice, y(r) as f64))
                .collect();
            ols_fit(&pts).ok()
        };
        let fits = Fits {
            strategy: fit_strategy,
            n_slices: fit(|r| r.n_tumor_slices),
            volume: fit(|r| r.tumor_volume_voxels),
            initial_area: fit(|r| r.initial_area_voxels),
        };

        Ok(Report {
            records,
            summaries,
            tie_count: wins.tie_count,
            fits,
            histograms,
            errors,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&r.patient_id),
                r.strategy,
                r.prompt_kind.as_str(),
                r.dice,
                r.n_tumor_slices,
                r.tumor_volume_voxels,
                r.initial_area_voxels,
                r.lesion_count
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
