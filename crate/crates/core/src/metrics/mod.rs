//! Overlap metrics, tumor descriptors, regression and strategy summaries.

mod dice;
mod ols;
mod properties;
pub mod report;
mod summary;

pub use dice::{dice_counts, per_slice_counts, per_slice_dice, volumetric_dice, DiceCounts};
pub use ols::{ols_fit, RegressionFit};
pub use properties::{tumor_properties, TumorProperties};
pub use report::{EvalRecord, Report};
pub use summary::{
    histogram, quantile_linear, summarize, win_counts, Histogram, ScoreStats, StrategySummary,
    WinTable,
};

use thiserror::Error;

use crate::volume::Dims3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims3, Dims3),
    #[error("insufficient points: need at least 2, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate abscissa: all x equal")]
    DegenerateAbscissa,
    #[error("no scores for strategy {0}")]
    EmptyScores(String),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("bin width {0} does not divide 1 evenly")]
    InvalidBinWidth(f64),
    #[error("patient {patient} has no record for strategy {strategy}")]
    MissingStrategy { patient: String, strategy: String },
    #[error("patient {patient} has more than one record for strategy {strategy}")]
    DuplicateRecord { patient: String, strategy: String },
}
