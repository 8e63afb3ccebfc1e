//! Allocation-only core of the anysynth engine.
//!
//! Everything here is a pure function of its inputs and an explicit seeded
//! random stream: normalized box geometry, per-category size statistics,
//! layout proposal and adjustment, detector matching and candidate
//! selection, the style-weight schedule, and annotation assembly.
//! File formats, the backend protocol and orchestration live in the
//! `anysynth` crate.

#![no_std]

extern crate alloc;

pub mod annotate;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod layout;
pub mod request;
pub mod schedule;
pub mod seed;
pub mod stats;

pub use annotate::{
    assemble, post_refine, yolo_lines, AnnotationDocument, AnnotationExtras, AnnotationFormat, CategoryRegistry,
};
pub use error::{CoreError, Result};
pub use filtering::{
    accept_candidate, match_detections, position_score, select_best, select_best_with, CandidateImage, Detection,
    InstanceMatch, MatchReport, ScoredCandidate, SelectionMode,
};
pub use geometry::{clamp_to_canvas, iou, overlap_ratio, BBox};
pub use layout::{
    adjust_layout, adjust_position, adjust_size, fallback_propose, CategoryRequest, InstanceSpec, Layout,
    LayoutRequest, LayoutRule, RuleArgument, RuleKind,
};
pub use request::sample_request;
pub use schedule::{style_lambda, StyleSchedule};
pub use stats::{sample_empirical, CategoryStats, StatsTable};

/// Random stream used by every seeded operation in the engine.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the engine's random stream from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
