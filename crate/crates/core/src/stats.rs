//! Per-category width and aspect-ratio statistics of a reference dataset.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::Rng;

/// Number of draws averaged per component by [`sample_empirical`].
pub const EMPIRICAL_DRAWS: usize = 100;

/// Lower bound applied to sampled widths and aspects.
pub const MIN_SAMPLED: f64 = 0.01;

/// Name reserved for the pooled entry over all categories.
pub const GLOBAL_CATEGORY: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    /// Mean box width as a fraction of image width.
    pub width_mean: f64,
    pub width_std: f64,
    /// Mean height/width ratio.
    pub aspect_mean: f64,
    pub aspect_std: f64,
    pub sample_count: u64,
}

impl CategoryStats {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason| Err(CoreError::InvalidStats { category: self.category.clone(), reason });
        let values = [self.width_mean, self.width_std, self.aspect_mean, self.aspect_std];
        if self.category.is_empty() {
            return fail("empty category name");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return fail("non-finite value");
        }
        if !(self.width_mean > 0.0 && self.width_mean <= 1.0) {
            return fail("width_mean outside (0, 1]");
        }
        if self.aspect_mean <= 0.0 {
            return fail("aspect_mean must be positive");
        }
        if self.width_std < 0.0 || self.aspect_std < 0.0 {
            return fail("negative standard deviation");
        }
        if self.sample_count == 0 {
            return fail("sample_count must be at least 1");
        }
        if self.sample_count < 2 && (self.width_std != 0.0 || self.aspect_std != 0.0) {
            return fail("single-sample entry with nonzero spread");
        }
        Ok(())
    }

    /// Built-in fallback used when neither the category nor a pooled entry is known.
    pub fn builtin_default() -> Self {
        Self {
            category: GLOBAL_CATEGORY.to_string(),
            width_mean: 0.25,
            width_std: 0.0,
            aspect_mean: 1.0,
            aspect_std: 0.0,
            sample_count: 1,
        }
    }
}

/// One reference box, already normalized by its image's dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample<'a> {
    pub category: &'a str,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsTable {
    pub source: String,
    pub entries: BTreeMap<String, CategoryStats>,
    /// Pooled statistics over every fitted box, if any were fitted.
    pub global: Option<CategoryStats>,
}

impl StatsTable {
    pub fn new(source: impl Into<String>) -> Self {
        Self { source: source.into(), entries: BTreeMap::new(), global: None }
    }

    pub fn get(&self, category: &str) -> Option<&CategoryStats> {
        self.entries.get(category)
    }

    /// Category entry, else the pooled entry, else the built-in default.
    pub fn lookup_or_default(&self, category: &str) -> CategoryStats {
        self.get(category).or(self.global.as_ref()).cloned().unwrap_or_else(CategoryStats::builtin_default)
    }

    pub fn insert(&mut self, stats: CategoryStats) -> Result<()> {
        stats.validate()?;
        if stats.category == GLOBAL_CATEGORY {
            self.global = Some(stats);
        } else {
            self.entries.insert(stats.category.clone(), stats);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, entry) in &self.entries {
            if name != &entry.category || name == GLOBAL_CATEGORY {
                return Err(CoreError::InvalidStats { category: name.clone(), reason: "key mismatch" });
            }
            entry.validate()?;
        }
        if let Some(g) = &self.global {
            g.validate()?;
        }
        Ok(())
    }
}

/// Running mean and population variance (Welford).
#[derive(Default, Clone, Copy)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            libm::sqrt((self.m2 / self.n as f64).max(0.0))
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Accumulator {
    width: Moments,
    aspect: Moments,
}

impl Accumulator {
    fn push(&mut self, s: &ReferenceSample<'_>) {
        self.width.push(s.width);
        self.aspect.push(s.height / s.width);
    }

    fn finish(&self, category: &str) -> CategoryStats {
        CategoryStats {
            category: category.to_string(),
            width_mean: self.width.mean,
            width_std: self.width.std(),
            aspect_mean: self.aspect.mean,
            aspect_std: self.aspect.std(),
            sample_count: self.width.n,
        }
    }
}

/// Fits mean and population standard deviation of widths and aspects per
/// category. Samples with non-positive or non-finite extent are skipped.
pub fn fit_category_stats<'a, I>(source: &str, samples: I) -> Result<StatsTable>
where
    I: IntoIterator<Item = ReferenceSample<'a>>,
{
    let mut per_category: BTreeMap<&'a str, Accumulator> = BTreeMap::new();
    let mut pooled = Accumulator::default();
    for s in samples {
        let usable = s.width.is_finite() && s.height.is_finite() && s.width > 0.0 && s.height > 0.0;
        if !usable {
            continue;
        }
        if s.category.is_empty() || s.category == GLOBAL_CATEGORY {
            return Err(CoreError::InvalidStats { category: s.category.to_string(), reason: "reserved or empty name" });
        }
        per_category.entry(s.category).or_default().push(&s);
        pooled.push(&s);
    }
    let mut table = StatsTable::new(source);
    for (name, acc) in &per_category {
        table.insert(acc.finish(name))?;
    }
    if pooled.width.n > 0 {
        table.insert(pooled.finish(GLOBAL_CATEGORY))?;
    }
    Ok(table)
}

/// Averages [`EMPIRICAL_DRAWS`] normal draws of width, then of aspect.
///
/// A component with zero spread returns its mean exactly and draws nothing.
/// Both results are clamped below at [`MIN_SAMPLED`].
pub fn sample_empirical(stats: &CategoryStats, rng: &mut Rng) -> (f64, f64) {
    let width = averaged_draws(stats.width_mean, stats.width_std, rng);
    let aspect = averaged_draws(stats.aspect_mean, stats.aspect_std, rng);
    (width.max(MIN_SAMPLED), aspect.max(MIN_SAMPLED))
}

fn averaged_draws(mean: f64, std: f64, rng: &mut Rng) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("validated stats have finite non-negative spread");
    let total: f64 = (0..EMPIRICAL_DRAWS).map(|_| normal.sample(rng)).sum();
    total / EMPIRICAL_DRAWS as f64
}

/// Uniform draw in `[lo, hi)`.
pub(crate) fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
