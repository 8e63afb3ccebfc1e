//! End-to-end runs: sample a request per image, lay it out, generate and
//! filter candidates, annotate the winner, and write the corpus.

mod config;
mod run;

pub use config::{BackendsConfig, ParsedBackends, PipelineConfig, StyleConfig};
pub use run::{
    check_backends, image_name, run_pipeline, Backends, CandidateRecord, ImageRecord, ImageStatus, LayoutAttempt,
    RunOutcome, RunReport, Selection, WORK_DIR,
};
