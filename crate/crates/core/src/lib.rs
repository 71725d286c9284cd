//! Toolkit for benchmarking seizure-detection algorithms on long-term EEG.
//!
//! The crate covers the whole evaluation pipeline: EDF and annotation I/O,
//! dataset standardization, event- and sample-based scoring, per-subject
//! aggregation and ranking, running external detectors over a dataset, and
//! a band-power baseline detector.

pub mod aggregate;
pub mod annotations;
pub mod baseline;
pub mod edf;
pub mod report;
pub mod runner;
pub mod score;
pub mod standardize;

pub use annotations::{Event, EventList};
pub use score::{Counts, Metrics, ScoringParams};
