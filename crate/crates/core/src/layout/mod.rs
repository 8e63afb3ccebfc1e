//! Scene layouts: the instance set that controls one generated image.

mod adjust;
mod fallback;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::BBox;

pub use adjust::{
    adjust_layout, adjust_position, adjust_position_with_step, adjust_size, adjust_size_with, blend_size, Direction,
    BLEND_RANGE, STEP_RANGE,
};
pub use fallback::{fallback_propose, PLACEMENT_ATTEMPTS};

pub const DEFAULT_MAX_INSTANCES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub id: u32,
    pub label: String,
    pub desc: String,
    /// Single-word category the detectors are asked for.
    pub cate: String,
    pub bbox: BBox,
    /// Reference image for this instance, if the user supplied one.
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub ref_image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_ref: Option<String>,
    pub instances: Vec<InstanceSpec>,
}

impl Layout {
    pub fn validate(&self, max_instances: usize) -> Result<()> {
        let n = self.instances.len();
        if n == 0 || n > max_instances {
            return Err(CoreError::InvalidLayout(format!("{n} instances, expected 1..={max_instances}")));
        }
        let mut ids = BTreeSet::new();
        for inst in &self.instances {
            if inst.label.trim().is_empty() || inst.cate.trim().is_empty() {
                return Err(CoreError::InvalidLayout(format!("instance {} has an empty label or category", inst.id)));
            }
            if !inst.bbox.in_canvas() {
                return Err(CoreError::InvalidLayout(format!("instance {} box leaves the canvas", inst.id)));
            }
            if !ids.insert(inst.id) {
                return Err(CoreError::InvalidLayout(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&InstanceSpec> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn has_cate(&self, cate: &str) -> bool {
        self.instances.iter().any(|i| same_category(&i.cate, cate))
    }
}

/// Category names compare case-insensitively, ignoring surrounding whitespace.
pub fn same_category(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    a.len() == b.len() && a.chars().zip(b.chars()).all(|(x, y)| x.to_lowercase().eq(y.to_lowercase()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRequest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Add,
    Remove,
    Replace,
    Scene,
    Constrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleArgument {
    Box(BBox),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRule {
    pub kind: RuleKind,
    #[serde(default)]
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<RuleArgument>,
}

impl LayoutRule {
    pub fn new(kind: RuleKind, subject: impl Into<String>) -> Self {
        Self { kind, subject: subject.into(), argument: None }
    }

    pub fn with_argument(mut self, argument: RuleArgument) -> Self {
        self.argument = Some(argument);
        self
    }

    fn text(&self) -> Option<&str> {
        match &self.argument {
            Some(RuleArgument::Text(t)) => Some(t.as_str()),
            _ => None,
        }
    }

    fn region(&self) -> Option<BBox> {
        match &self.argument {
            Some(RuleArgument::Box(b)) => Some(*b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialBox {
    pub label: String,
    pub bbox: BBox,
}

fn default_max_instances() -> usize {
    DEFAULT_MAX_INSTANCES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRequest {
    #[serde(default)]
    pub categories: Vec<CategoryRequest>,
    #[serde(default)]
    pub rules: Vec<LayoutRule>,
    #[serde(default)]
    pub initial_boxes: Vec<InitialBox>,
    /// Reference image per category name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub references: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_ref: Option<String>,
    pub seed: u64,
    #[serde(default = "default_max_instances")]
    pub max_instances: usize,
}

impl LayoutRequest {
    pub fn new(seed: u64) -> Self {
        Self {
            categories: Vec::new(),
            rules: Vec::new(),
            initial_boxes: Vec::new(),
            references: BTreeMap::new(),
            style_ref: None,
            seed,
            max_instances: DEFAULT_MAX_INSTANCES,
        }
    }

    pub fn with_category(mut self, name: impl Into<String>, count: Option<u32>) -> Self {
        self.categories.push(CategoryRequest { name: name.into(), count });
        self
    }

    pub fn with_rule(mut self, rule: LayoutRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_initial_box(mut self, label: impl Into<String>, bbox: BBox) -> Self {
        self.initial_boxes.push(InitialBox { label: label.into(), bbox });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(CoreError::InvalidRequest(msg));
        if self.categories.is_empty() && self.initial_boxes.is_empty() {
            return invalid("needs at least one category or initial box".into());
        }
        if self.max_instances == 0 {
            return invalid("max_instances must be positive".into());
        }
        if let Some(c) = self.categories.iter().find(|c| c.name.trim().is_empty()) {
            return invalid(format!("empty category name (count {:?})", c.count));
        }
        for b in &self.initial_boxes {
            if b.label.trim().is_empty() || !b.bbox.in_canvas() {
                return invalid(format!("initial box {:?} needs a label and an in-canvas box", b.label));
            }
        }
        for r in &self.rules {
            let needs_subject =
                matches!(r.kind, RuleKind::Add | RuleKind::Remove | RuleKind::Replace | RuleKind::Constrain);
            if needs_subject && r.subject.trim().is_empty() {
                return invalid(format!("{:?} rule without a subject", r.kind));
            }
            if r.kind == RuleKind::Replace && r.text().is_none_or(|t| t.trim().is_empty()) {
                return invalid(format!("replace rule for {:?} needs a replacement category", r.subject));
            }
            if r.kind == RuleKind::Scene && r.text().is_none() {
                return invalid("scene rule needs a text argument".into());
            }
            if r.kind == RuleKind::Constrain && r.region().is_none_or(|b| !b.in_canvas()) {
                return invalid(format!("constrain rule for {:?} needs an in-canvas box", r.subject));
            }
        }
        Ok(())
    }

    fn reference_for(&self, cate: &str) -> Option<&String> {
        self.references.iter().find(|(k, _)| same_category(k, cate)).map(|(_, v)| v)
    }
}

/// Lists the rules a layout fails to honor.
pub fn rule_violations(layout: &Layout, rules: &[LayoutRule]) -> Vec<String> {
    let mut violations = Vec::new();
    for rule in rules {
        match rule.kind {
            RuleKind::Add if !layout.has_cate(&rule.subject) => {
                violations.push(format!("add {:?}: no such instance", rule.subject));
            }
            RuleKind::Remove if layout.has_cate(&rule.subject) => {
                violations.push(format!("remove {:?}: instance still present", rule.subject));
            }
            RuleKind::Replace => {
                let replacement = rule.text().unwrap_or_default();
                if layout.has_cate(&rule.subject) {
                    violations.push(format!("replace {:?}: original still present", rule.subject));
                } else if !layout.has_cate(replacement) {
                    violations.push(format!("replace {:?}: replacement {replacement:?} missing", rule.subject));
                }
            }
            RuleKind::Constrain => {
                if let Some(region) = rule.region() {
                    let outside = layout
                        .instances
                        .iter()
                        .filter(|i| same_category(&i.cate, &rule.subject))
                        .any(|i| !contains(&region, &i.bbox));
                    if outside {
                        violations.push(format!("constrain {:?}: instance outside region", rule.subject));
                    }
                }
            }
            _ => {}
        }
    }
    violations
}

fn contains(outer: &BBox, inner: &BBox) -> bool {
    const EPS: f64 = 1e-9;
    inner.x_min() >= outer.x_min() - EPS
        && inner.y_min() >= outer.y_min() - EPS
        && inner.x_max() <= outer.x_max() + EPS
        && inner.y_max() <= outer.y_max() + EPS
}

/// Checks a proposer's layout against the request it answered.
///
/// Reference images the user never supplied are dropped from the reply.
pub fn validate_proposal(request: &LayoutRequest, mut layout: Layout) -> Result<Layout> {
    layout.validate(request.max_instances)?;
    let violations = rule_violations(&layout, &request.rules);
    if !violations.is_empty() {
        return Err(CoreError::RuleViolation(violations));
    }
    for inst in &mut layout.instances {
        if inst.ref_image.is_some() && request.reference_for(&inst.cate).is_none() {
            inst.ref_image = None;
        }
    }
    if layout.style_ref.is_none() {
        layout.style_ref = request.style_ref.clone();
    }
    Ok(layout)
}
