//! Drives promptable 2D segmenters across the axial slices of a volume.
//!
//! A [`backend::SessionHandle`] wraps one segmenter bound to one volume;
//! [`propagation`] walks it along slice chains starting from a single prompt;
//! [`eval`] runs whole datasets and produces evaluation reports.

pub mod backend;
pub mod eval;
pub mod phantom;
pub mod propagation;

pub use backend::{BackendError, BackendRegistry, SessionConfig, SessionHandle};
pub use propagation::{build_plan, run_interactive, run_propagation, PropagationPlan, PropagationTrace};
