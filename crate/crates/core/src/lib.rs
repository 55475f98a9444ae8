//! Passenger counting and ridership prediction from bus-stop Wi-Fi captures.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`ingest`] parses frame CSVs, checks MAC randomization bits and hashes
//!    addresses to [`ingest::DeviceId`]s.
//! 2. [`cleaning`] drops noise frames and cuts each device's frames into dwell
//!    [`cleaning::Segment`]s.
//! 3. [`aggregation`] turns kept segments into per-minute and hourly counts.
//! 4. [`weather`] loads hourly weather observations.
//! 5. [`features`] joins counts with weather and calendar features and builds
//!    normalized design matrices.
//! 6. [`models`] trains and compares linear, neural and tree regressors.
//!
//! [`synth`] generates scenarios with planted ground truth for every stage.

pub mod aggregation;
pub mod cleaning;
pub mod error;
pub mod features;
pub mod ingest;
pub mod models;
pub mod synth;
pub mod time;
pub mod weather;

pub use error::{Error, Result};
