//! Post-refinement and per-image annotation documents.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::filtering::{match_detections, CandidateImage, Detection};
use crate::geometry::BBox;
use crate::layout::{same_category, Layout};

/// Replaces each instance box with its matching refiner detection, if any.
///
/// Matching is the same greedy procedure used for filtering, so only
/// same-category detections above the match IoU are taken.
pub fn post_refine(layout: &Layout, detections: &[Detection]) -> Layout {
    let report = match_detections(layout, detections, "refiner");
    let mut out = layout.clone();
    for (inst, m) in out.instances.iter_mut().zip(&report.instances) {
        if let Some(d) = m.detection {
            inst.bbox = detections[d].bbox;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationFormat {
    Bbox,
    Coco,
    Yolo,
    Caption,
    RegionCaption,
    Relation,
    Mask,
}

impl AnnotationFormat {
    pub fn name(self) -> &'static str {
        match self {
            AnnotationFormat::Bbox => "bbox",
            AnnotationFormat::Coco => "coco",
            AnnotationFormat::Yolo => "yolo",
            AnnotationFormat::Caption => "caption",
            AnnotationFormat::RegionCaption => "region_caption",
            AnnotationFormat::Relation => "relation",
            AnnotationFormat::Mask => "mask",
        }
    }

    /// Whether this format needs content from an annotator backend.
    pub fn needs_annotator(self) -> bool {
        matches!(
            self,
            AnnotationFormat::Caption
                | AnnotationFormat::RegionCaption
                | AnnotationFormat::Relation
                | AnnotationFormat::Mask
        )
    }
}

impl core::str::FromStr for AnnotationFormat {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "bbox" => AnnotationFormat::Bbox,
            "coco" => AnnotationFormat::Coco,
            "yolo" => AnnotationFormat::Yolo,
            "caption" => AnnotationFormat::Caption,
            "region_caption" => AnnotationFormat::RegionCaption,
            "relation" => AnnotationFormat::Relation,
            "mask" => AnnotationFormat::Mask,
            other => return Err(CoreError::InvalidRequest(format!("unknown annotation format {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: u32,
    pub predicate: String,
    pub object: u32,
}

/// Content produced by optional annotator backends, keyed by instance id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationExtras {
    #[serde(default)]
    pub global_caption: Option<String>,
    #[serde(default)]
    pub region_captions: Option<BTreeMap<u32, String>>,
    #[serde(default)]
    pub relations: Option<Vec<Relation>>,
    /// Mask reference (file path or encoded mask) per instance.
    #[serde(default)]
    pub masks: Option<BTreeMap<u32, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub id: u32,
    pub label: String,
    pub cate: String,
    pub bbox: BBox,
    pub desc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub image: CandidateImage,
    pub scene: String,
    pub instances: Vec<AnnotatedInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_captions: Option<BTreeMap<u32, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relations: Option<Vec<Relation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<BTreeMap<u32, String>>,
    pub formats_emitted: BTreeSet<AnnotationFormat>,
}

fn require<T: Clone>(
    slot: &Option<T>,
    format: AnnotationFormat,
    wanted: &BTreeSet<AnnotationFormat>,
) -> Result<Option<T>> {
    if !wanted.contains(&format) {
        return Ok(None);
    }
    slot.clone().map(Some).ok_or(CoreError::UnavailableAnnotation(format.name()))
}

fn check_keys<V>(map: &Option<BTreeMap<u32, V>>, layout: &Layout, what: &str) -> Result<()> {
    if let Some(m) = map {
        if let Some(id) = m.keys().find(|id| layout.get(**id).is_none()) {
            return Err(CoreError::InvalidLayout(format!("{what} for unknown instance {id}")));
        }
    }
    Ok(())
}

/// Builds the annotation document for one selected image.
///
/// Optional slots are filled only for requested formats, and a requested
/// format whose annotator output is missing is an error.
pub fn assemble(
    image: &CandidateImage,
    layout: &Layout,
    extras: &AnnotationExtras,
    formats: &BTreeSet<AnnotationFormat>,
) -> Result<AnnotationDocument> {
    let global_caption = require(&extras.global_caption, AnnotationFormat::Caption, formats)?;
    let region_captions = require(&extras.region_captions, AnnotationFormat::RegionCaption, formats)?;
    let relations = require(&extras.relations, AnnotationFormat::Relation, formats)?;
    let masks = require(&extras.masks, AnnotationFormat::Mask, formats)?;
    check_keys(&region_captions, layout, "region caption")?;
    check_keys(&masks, layout, "mask")?;
    if let Some(rels) = &relations {
        if let Some(r) = rels.iter().find(|r| layout.get(r.subject).is_none() || layout.get(r.object).is_none()) {
            return Err(CoreError::InvalidLayout(format!("relation {:?} names an unknown instance", r.predicate)));
        }
    }

    let instances = layout
        .instances
        .iter()
        .map(|i| AnnotatedInstance {
            id: i.id,
            label: i.label.clone(),
            cate: i.cate.clone(),
            bbox: i.bbox,
            desc: i.desc.clone(),
        })
        .collect();
    Ok(AnnotationDocument {
        image: image.clone(),
        scene: layout.scene.clone(),
        instances,
        global_caption,
        region_captions,
        relations,
        masks,
        formats_emitted: formats.clone(),
    })
}

/// Ordered category names; a name's position is its class index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryRegistry {
    names: Vec<String>,
}

impl CategoryRegistry {
    /// Keeps the first occurrence of names that compare equal.
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for n in names {
            let n = n.into();
            if !out.iter().any(|o| same_category(o, &n)) {
                out.push(n);
            }
        }
        Self { names: out }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, cate: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| same_category(n, cate))
            .ok_or_else(|| CoreError::UnknownCategory(String::from(cate)))
    }
}

/// YOLO label lines `class cx cy w h`, normalized, six decimals.
pub fn yolo_lines(document: &AnnotationDocument, registry: &CategoryRegistry) -> Result<Vec<String>> {
    document
        .instances
        .iter()
        .map(|inst| {
            let class = registry.index_of(&inst.cate)?;
            let [cx, cy, w, h] = inst.bbox.to_center_form();
            Ok(format!("{class} {cx:.6} {cy:.6} {w:.6} {h:.6}"))
        })
        .collect()
}
