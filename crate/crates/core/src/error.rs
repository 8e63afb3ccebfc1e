use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("invalid box ({0}, {1}, {2}, {3}): needs finite corners with min < max")]
    InvalidBox(f64, f64, f64, f64),

    #[error("box lies outside the unit canvas")]
    OutsideCanvas,

    #[error("invalid category statistics for {category:?}: {reason}")]
    InvalidStats { category: String, reason: &'static str },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid layout request: {0}")]
    InvalidRequest(String),

    #[error("layout violates rules: {}", .0.join("; "))]
    RuleViolation(Vec<String>),

    #[error("invalid style schedule: {0}")]
    InvalidSchedule(&'static str),

    #[error("timestep {t} outside schedule of {total} steps")]
    TimestepOutOfRange { t: u32, total: u32 },

    #[error("every candidate was discarded")]
    AllDiscarded,

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("annotation {0} unavailable: no annotator produced it")]
    UnavailableAnnotation(&'static str),

    #[error("invalid confidence {0}: must lie in [0, 1]")]
    InvalidConfidence(f64),
}
