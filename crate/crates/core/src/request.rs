//! Per-image layout requests drawn from the run configuration.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::Rng as _;

use crate::error::{CoreError, Result};
use crate::layout::{CategoryRequest, LayoutRequest};
use crate::rng_from_seed;
use crate::seed::derive_seed;

/// Draws the instance count uniformly from `instances`, then that many
/// categories uniformly with replacement. The request seed, and so the
/// whole request, is a stable function of `(master_seed, image_index)`.
pub fn sample_request(
    categories: &[String],
    instances: RangeInclusive<u32>,
    master_seed: u64,
    image_index: u64,
) -> Result<LayoutRequest> {
    if categories.is_empty() {
        return Err(CoreError::InvalidRequest("category list is empty".into()));
    }
    if instances.is_empty() || *instances.start() == 0 {
        return Err(CoreError::InvalidRequest("instance range must be a nonempty range of positive counts".into()));
    }
    let seed = derive_seed(master_seed, &[image_index]);
    let mut rng = rng_from_seed(seed);
    let count = rng.random_range(instances);
    let mut picked: Vec<CategoryRequest> = Vec::new();
    for _ in 0..count {
        let name = &categories[rng.random_range(0..categories.len())];
        match picked.iter_mut().find(|c| &c.name == name) {
            Some(c) => c.count = Some(c.count.unwrap_or(1) + 1),
            None => picked.push(CategoryRequest { name: name.clone(), count: Some(1) }),
        }
    }
    let mut request = LayoutRequest::new(seed);
    request.categories = picked;
    Ok(request)
}

/// Total instances asked for by a sampled request.
pub fn requested_instances(request: &LayoutRequest) -> u32 {
    request.categories.iter().map(|c| c.count.unwrap_or(1)).sum()
}
