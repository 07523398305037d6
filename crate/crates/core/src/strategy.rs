use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Slice traversal order for propagating a single-slice prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    BottomToTop,
    TopToBottom,
    CenterOutward,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::BottomToTop,
        Strategy::TopToBottom,
        Strategy::CenterOutward,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::BottomToTop => "bottom-to-top",
            Strategy::TopToBottom => "top-to-bottom",
            Strategy::CenterOutward => "center-outward",
        }
    }

    /// Tie-break rank when several strategies share the best score; lower wins.
    pub fn tie_priority(&self) -> u8 {
        match self {
            Strategy::CenterOutward => 0,
            Strategy::BottomToTop => 1,
            Strategy::TopToBottom => 2,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}
