//! File formats, backend protocol, simulators and orchestration for the
//! anysynth engine.
//!
//! The pure algorithms live in `anysynth-core`; this crate moves data
//! between them and the outside world: COCO and stats files, the
//! line-delimited JSON protocol spoken with model backends, built-in
//! simulated backends, and the end-to-end pipeline run.

pub mod coco;
pub mod error;
pub mod fsutil;
pub mod pipeline;
pub mod protocol;
pub mod sim;
pub mod stats_file;

pub use error::{Error, Result};
