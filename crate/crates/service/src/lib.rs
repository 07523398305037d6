//! Batch evaluation CLI and HTTP service over the slice propagation engine.
//!
//! The service keeps uploaded volumes under a data directory, runs
//! propagation jobs on one FIFO worker per backend and serves masks, traces,
//! meshes and metrics as they complete.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod store;

pub use error::ApiError;
pub use jobs::{JobRequest, JobState, Service};
