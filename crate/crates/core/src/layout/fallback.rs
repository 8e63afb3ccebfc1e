//! Deterministic stand-in for a layout-proposer backend.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{same_category, InstanceSpec, Layout, LayoutRequest, RuleArgument, RuleKind};
use crate::error::{CoreError, Result};
use crate::geometry::{overlap_ratio, BBox};
use crate::stats::{sample_empirical, uniform, StatsTable};
use crate::Rng;

/// Center draws tried per instance before settling for the least overlap.
pub const PLACEMENT_ATTEMPTS: usize = 20;

struct Planned {
    label: String,
    fixed: Option<BBox>,
}

/// Builds a layout from the request without any external service.
///
/// Initial boxes are kept verbatim. Every other instance gets a size from
/// [`sample_empirical`] and the first overlap-free center out of
/// [`PLACEMENT_ATTEMPTS`] draws, or the least-overlapping one if none is free.
pub fn fallback_propose(request: &LayoutRequest, stats: &StatsTable, rng: &mut Rng) -> Result<Layout> {
    request.validate()?;
    let mut plan: Vec<Planned> = request
        .initial_boxes
        .iter()
        .map(|b| Planned { label: b.label.trim().to_string(), fixed: Some(b.bbox) })
        .collect();

    for c in &request.categories {
        let wanted = c.count.unwrap_or(1) as usize;
        let have = plan.iter().filter(|p| same_category(&p.label, &c.name)).count();
        for _ in have..wanted {
            plan.push(Planned { label: c.name.trim().to_string(), fixed: None });
        }
    }

    let mut scene = None;
    let mut regions: BTreeMap<String, BBox> = BTreeMap::new();
    for rule in &request.rules {
        let subject = rule.subject.trim();
        match rule.kind {
            RuleKind::Add => {
                if !plan.iter().any(|p| same_category(&p.label, subject)) {
                    plan.push(Planned { label: subject.to_string(), fixed: None });
                }
            }
            RuleKind::Remove => plan.retain(|p| !same_category(&p.label, subject)),
            RuleKind::Replace => {
                if let Some(RuleArgument::Text(to)) = &rule.argument {
                    for p in plan.iter_mut().filter(|p| same_category(&p.label, subject)) {
                        p.label = to.trim().to_string();
                    }
                }
            }
            RuleKind::Scene => {
                if let Some(RuleArgument::Text(t)) = &rule.argument {
                    scene = Some(t.clone());
                }
            }
            RuleKind::Constrain => {
                if let Some(RuleArgument::Box(region)) = &rule.argument {
                    regions.insert(subject.to_lowercase(), *region);
                }
            }
        }
    }

    if plan.is_empty() {
        return Err(CoreError::InvalidRequest("rules removed every instance".into()));
    }
    if plan.len() > request.max_instances {
        return Err(CoreError::InvalidRequest(format!(
            "{} instances requested, maximum is {}",
            plan.len(),
            request.max_instances
        )));
    }

    let mut placed: Vec<BBox> = plan.iter().filter_map(|p| p.fixed).collect();
    let mut instances = Vec::with_capacity(plan.len());
    for (id, p) in plan.iter().enumerate() {
        let bbox = match p.fixed {
            Some(b) => b,
            None => {
                let region = regions.get(&p.label.to_lowercase()).copied().unwrap_or_else(BBox::unit);
                let b = place(&p.label, &region, &placed, stats, rng);
                placed.push(b);
                b
            }
        };
        instances.push(InstanceSpec {
            id: id as u32,
            label: p.label.clone(),
            desc: format!("a {}", p.label),
            cate: p.label.clone(),
            bbox,
            ref_image: request.reference_for(&p.label).cloned(),
        });
    }

    let scene = scene.unwrap_or_else(|| describe_scene(&instances));
    Ok(Layout { scene, style_ref: request.style_ref.clone(), instances })
}

fn place(label: &str, region: &BBox, placed: &[BBox], stats: &StatsTable, rng: &mut Rng) -> BBox {
    let entry = stats.lookup_or_default(label);
    let (width, aspect) = sample_empirical(&entry, rng);
    let w = width.min(region.width());
    let h = (w * aspect).min(region.height());

    let mut best: Option<(f64, BBox)> = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let cx = uniform(rng, region.x_min() + w / 2.0, region.x_max() - w / 2.0);
        let cy = uniform(rng, region.y_min() + h / 2.0, region.y_max() - h / 2.0);
        let candidate = BBox::from_center(cx, cy, w, h)
            .map(|b| crate::geometry::clamp_to_canvas(&b))
            .expect("sampled extent is positive");
        let ratio = overlap_ratio(&candidate, placed);
        if best.is_none_or(|(r, _)| ratio < r) {
            best = Some((ratio, candidate));
        }
        if ratio == 0.0 {
            break;
        }
    }
    best.expect("at least one attempt").1
}

fn describe_scene(instances: &[InstanceSpec]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for i in instances {
        if !names.iter().any(|n| same_category(n, &i.label)) {
            names.push(&i.label);
        }
    }
    format!("a realistic photo containing {}", names.join(", "))
}
