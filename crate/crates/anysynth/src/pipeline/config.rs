use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anysynth_core::{AnnotationFormat, SelectionMode, StyleSchedule};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::protocol::BackendSpec;

fn default_range() -> [u32; 2] {
    [1, 4]
}
fn default_candidates() -> u32 {
    4
}
fn default_formats() -> Vec<AnnotationFormat> {
    vec![AnnotationFormat::Bbox, AnnotationFormat::Coco, AnnotationFormat::Yolo]
}
fn one() -> u32 {
    1
}
fn one_usize() -> usize {
    1
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default)]
    pub proposer: Option<String>,
    pub generator: String,
    pub detectors: Vec<String>,
    pub scorer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    pub early_weight: f64,
    pub late_weight: f64,
    pub boundary: u32,
    pub total_steps: u32,
}

impl Default for StyleConfig {
    fn default() -> Self {
        let s = StyleSchedule::default();
        Self {
            early_weight: s.early_weight,
            late_weight: s.late_weight,
            boundary: s.boundary,
            total_steps: s.total_steps,
        }
    }
}

impl From<StyleConfig> for StyleSchedule {
    fn from(c: StyleConfig) -> Self {
        StyleSchedule {
            early_weight: c.early_weight,
            late_weight: c.late_weight,
            boundary: c.boundary,
            total_steps: c.total_steps,
        }
    }
}

/// A pipeline run, as read from a TOML file.
///
/// Relative paths are resolved against the file's directory by [`PipelineConfig::load`].
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Stats file; without one, sizes come from the built-in default.
    #[serde(default)]
    pub stats: Option<PathBuf>,
    pub categories: Vec<String>,
    pub images: u32,
    #[serde(default = "default_range")]
    pub instances_per_image: [u32; 2],
    /// Candidates generated per layout.
    #[serde(default = "default_candidates")]
    pub candidates: u32,
    #[serde(default = "default_formats")]
    pub formats: Vec<AnnotationFormat>,
    #[serde(default)]
    pub master_seed: u64,
    pub output: PathBuf,
    /// Fresh layouts tried after all candidates of a layout are discarded.
    #[serde(default = "one")]
    pub max_regenerations: u32,
    #[serde(default = "one_usize")]
    pub parallelism: usize,
    #[serde(default)]
    pub selection: SelectionMode,
    /// Index into `backends.detectors` of the detector whose boxes refine
    /// the annotations; defaults to the last one.
    #[serde(default)]
    pub refiner: Option<usize>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Extra attempts when a proposer's layout breaks a rule.
    #[serde(default = "default_retries")]
    pub proposer_retries: u32,
    #[serde(default)]
    pub max_instances: Option<usize>,
    pub backends: BackendsConfig,
    #[serde(default)]
    pub style: StyleConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fsutil::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output = base.join(&cfg.output);
        cfg.stats = cfg.stats.map(|s| base.join(s));
        Ok(cfg)
    }

    pub fn schedule(&self) -> StyleSchedule {
        self.style.into()
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn refiner_index(&self) -> usize {
        self.refiner.unwrap_or(self.backends.detectors.len().saturating_sub(1))
    }

    pub fn format_set(&self) -> BTreeSet<AnnotationFormat> {
        self.formats.iter().copied().collect()
    }

    pub fn max_instances(&self) -> usize {
        self.max_instances
            .unwrap_or(anysynth_core::layout::DEFAULT_MAX_INSTANCES)
            .max(self.instances_per_image[1] as usize)
    }

    pub fn backend_specs(&self) -> Result<ParsedBackends> {
        let parse = |s: &String| s.parse::<BackendSpec>().map_err(|e| Error::Config(e.to_string()));
        Ok(ParsedBackends {
            proposer: self.backends.proposer.as_ref().map(parse).transpose()?,
            generator: parse(&self.backends.generator)?,
            detectors: self.backends.detectors.iter().map(parse).collect::<Result<_>>()?,
            scorer: parse(&self.backends.scorer)?,
        })
    }

    /// Checks everything that can be checked without starting a backend.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.categories.is_empty() {
            return bad("categories must not be empty".into());
        }
        if self.categories.iter().any(|c| c.trim().is_empty()) {
            return bad("category names must not be empty".into());
        }
        if self.images == 0 {
            return bad("images must be at least 1".into());
        }
        let [lo, hi] = self.instances_per_image;
        if lo == 0 || lo > hi {
            return bad(format!("instances_per_image [{lo}, {hi}] must be a nonempty range starting at 1 or more"));
        }
        if self.max_instances.is_some_and(|m| m < hi as usize) {
            return bad("max_instances is below the top of instances_per_image".into());
        }
        if self.candidates == 0 {
            return bad("candidates must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout_secs must be positive".into());
        }
        if self.backends.detectors.is_empty() {
            return bad("at least one detector is required".into());
        }
        if self.refiner_index() >= self.backends.detectors.len() {
            return bad(format!("refiner {} does not name a detector", self.refiner_index()));
        }
        if self.formats.is_empty() {
            return bad("formats must not be empty".into());
        }
        if let Some(f) = self.formats.iter().find(|f| f.needs_annotator()) {
            return bad(format!("format {:?} needs an annotator backend, which this engine does not run", f.name()));
        }
        self.schedule().validate()?;
        self.backend_specs()?;
        Ok(())
    }
}

pub struct ParsedBackends {
    pub proposer: Option<BackendSpec>,
    pub generator: BackendSpec,
    pub detectors: Vec<BackendSpec>,
    pub scorer: BackendSpec,
}
