//! COCO instance annotations: reference-set reader, corpus writer, and a
//! structural schema checker.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use anysynth_core::annotate::CategoryRegistry;
use anysynth_core::stats::{fit_category_stats, ReferenceSample};
use anysynth_core::{AnnotationDocument, StatsTable};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fsutil::json_str;

#[derive(Debug, Deserialize)]
struct ImageRecord {
    id: u64,
    width: f64,
    height: f64,
    #[serde(default)]
    file_name: Option<String>,
}

#[derive(Debug, Deserialize)]
struct AnnotationRecord {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct CategoryRecord {
    id: u64,
    name: String,
}

/// One reference box in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBox {
    pub category: String,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceSet {
    pub boxes: Vec<ReferenceBox>,
    /// Images with zero width or height; their boxes are not used.
    pub rejected_images: usize,
    /// Boxes skipped because of zero extent or a rejected image.
    pub rejected_boxes: usize,
}

/// Pixel-space box of a parsed COCO annotation, for round-trip checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoBox {
    pub image_file: Option<String>,
    pub image_width: f64,
    pub image_height: f64,
    pub category: String,
    pub bbox: [f64; 4],
}

fn records<T: for<'de> Deserialize<'de>>(root: &Value, key: &str) -> Result<Vec<T>> {
    let arr = root
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse("COCO file", format!("missing array {key:?}")))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| T::deserialize(v).map_err(|e| Error::parse(format!("COCO {key}[{i}]"), e)))
        .collect()
}

struct Parsed {
    images: HashMap<u64, ImageRecord>,
    categories: HashMap<u64, String>,
    annotations: Vec<AnnotationRecord>,
}

fn parse(text: &str) -> Result<Parsed> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse("COCO file", e))?;
    let mut images = HashMap::new();
    for (i, img) in records::<ImageRecord>(&root, "images")?.into_iter().enumerate() {
        if images.insert(img.id, img).is_some() {
            return Err(Error::parse(format!("COCO images[{i}]"), "duplicate image id"));
        }
    }
    let mut categories = HashMap::new();
    for (i, c) in records::<CategoryRecord>(&root, "categories")?.into_iter().enumerate() {
        if categories.insert(c.id, c.name).is_some() {
            return Err(Error::parse(format!("COCO categories[{i}]"), "duplicate category id"));
        }
    }
    let annotations = records::<AnnotationRecord>(&root, "annotations")?;
    for (i, a) in annotations.iter().enumerate() {
        if !images.contains_key(&a.image_id) {
            return Err(Error::parse(format!("COCO annotations[{i}]"), format!("unknown image_id {}", a.image_id)));
        }
        if !categories.contains_key(&a.category_id) {
            return Err(Error::parse(
                format!("COCO annotations[{i}]"),
                format!("unknown category_id {}", a.category_id),
            ));
        }
    }
    Ok(Parsed { images, categories, annotations })
}

/// Reads a COCO file into boxes normalized by their own image's size.
///
/// When `only` is given, other categories are dropped.
pub fn read_reference(text: &str, only: Option<&[String]>) -> Result<ReferenceSet> {
    let parsed = parse(text)?;
    let mut set = ReferenceSet {
        rejected_images: parsed.images.values().filter(|i| !(i.width > 0.0 && i.height > 0.0)).count(),
        ..Default::default()
    };
    for a in &parsed.annotations {
        let name = &parsed.categories[&a.category_id];
        if only.is_some_and(|keep| !keep.iter().any(|k| k == name)) {
            continue;
        }
        let img = &parsed.images[&a.image_id];
        let [_, _, w, h] = a.bbox;
        if !(img.width > 0.0 && img.height > 0.0) || !(w > 0.0 && h > 0.0) {
            set.rejected_boxes += 1;
            continue;
        }
        set.boxes.push(ReferenceBox { category: name.clone(), width: w / img.width, height: h / img.height });
    }
    Ok(set)
}

pub struct FitOutcome {
    pub table: StatsTable,
    pub rejected_images: usize,
    pub rejected_boxes: usize,
}

/// Fits category statistics straight from a COCO file.
pub fn fit_from_coco(text: &str, source: &str, only: Option<&[String]>) -> Result<FitOutcome> {
    let set = read_reference(text, only)?;
    let samples = set.boxes.iter().map(|b| ReferenceSample { category: &b.category, width: b.width, height: b.height });
    let table = fit_category_stats(source, samples)?;
    Ok(FitOutcome { table, rejected_images: set.rejected_images, rejected_boxes: set.rejected_boxes })
}

/// Every annotation box in file order, in pixels.
pub fn read_boxes(text: &str) -> Result<Vec<CocoBox>> {
    let parsed = parse(text)?;
    Ok(parsed
        .annotations
        .iter()
        .map(|a| {
            let img = &parsed.images[&a.image_id];
            CocoBox {
                image_file: img.file_name.clone(),
                image_width: img.width,
                image_height: img.height,
                category: parsed.categories[&a.category_id].clone(),
                bbox: a.bbox,
            }
        })
        .collect())
}

fn base_name(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

/// Serializes documents as a COCO instance file.
///
/// Image ids follow document order from 1, annotation ids run from 1 across
/// the whole file, category ids are registry positions plus one, and every
/// float is written with two decimals.
pub fn emit_coco(documents: &[AnnotationDocument], registry: &CategoryRegistry) -> Result<String> {
    let mut images = Vec::with_capacity(documents.len());
    let mut annotations = Vec::new();
    let mut next_ann = 1u64;
    for (i, doc) in documents.iter().enumerate() {
        let image_id = i as u64 + 1;
        let (w, h) = (doc.image.width as f64, doc.image.height as f64);
        images.push(format!(
            "    {{\"id\": {image_id}, \"file_name\": {}, \"width\": {}, \"height\": {}}}",
            json_str(base_name(&doc.image.path)),
            doc.image.width,
            doc.image.height
        ));
        for inst in &doc.instances {
            let category_id = registry.index_of(&inst.cate)? + 1;
            let px = [inst.bbox.x_min() * w, inst.bbox.y_min() * h, inst.bbox.width() * w, inst.bbox.height() * h];
            annotations.push(format!(
                "    {{\"id\": {next_ann}, \"image_id\": {image_id}, \"category_id\": {category_id}, \
                 \"bbox\": [{:.2}, {:.2}, {:.2}, {:.2}], \"area\": {:.2}, \"iscrowd\": 0}}",
                px[0],
                px[1],
                px[2],
                px[3],
                px[2] * px[3]
            ));
            next_ann += 1;
        }
    }
    let categories: Vec<String> = registry
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| format!("    {{\"id\": {}, \"name\": {}, \"supercategory\": \"object\"}}", i + 1, json_str(n)))
        .collect();

    let mut out = String::from("{\n  \"info\": {\"description\": \"anysynth synthetic corpus\"},\n");
    for (key, items, last) in
        [("images", &images, false), ("annotations", &annotations, false), ("categories", &categories, true)]
    {
        if items.is_empty() {
            let _ = write!(out, "  \"{key}\": []");
        } else {
            let _ = write!(out, "  \"{key}\": [\n{}\n  ]", items.join(",\n"));
        }
        out.push_str(if last { "\n" } else { ",\n" });
    }
    out.push_str("}\n");
    Ok(out)
}

/// Structural checks on a COCO instance file. Returns every violation found.
pub fn check_coco(text: &str) -> Vec<String> {
    let mut errs = Vec::new();
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return vec![format!("not JSON: {e}")],
    };
    let Some(obj) = root.as_object() else {
        return vec!["top level is not an object".into()];
    };
    let arr = |k: &str, errs: &mut Vec<String>| -> Vec<Value> {
        match obj.get(k).and_then(Value::as_array) {
            Some(a) => a.clone(),
            None => {
                errs.push(format!("missing array {k:?}"));
                Vec::new()
            }
        }
    };
    let images = arr("images", &mut errs);
    let annotations = arr("annotations", &mut errs);
    let categories = arr("categories", &mut errs);

    let mut image_sizes: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        let id = img.get("id").and_then(Value::as_u64);
        let w = img.get("width").and_then(Value::as_u64).filter(|&v| v > 0);
        let h = img.get("height").and_then(Value::as_u64).filter(|&v| v > 0);
        if img.get("file_name").and_then(Value::as_str).is_none_or(str::is_empty) {
            errs.push(format!("images[{i}]: file_name must be a nonempty string"));
        }
        match (id, w, h) {
            (Some(id), Some(w), Some(h)) => {
                if image_sizes.insert(id, (w as f64, h as f64)).is_some() {
                    errs.push(format!("images[{i}]: duplicate id {id}"));
                }
            }
            _ => errs.push(format!("images[{i}]: id, width and height must be positive integers")),
        }
    }

    let mut category_ids = BTreeSet::new();
    let mut category_names = BTreeSet::new();
    for (i, c) in categories.iter().enumerate() {
        match c.get("id").and_then(Value::as_u64) {
            Some(id) if category_ids.insert(id) => {}
            Some(id) => errs.push(format!("categories[{i}]: duplicate id {id}")),
            None => errs.push(format!("categories[{i}]: id must be an integer")),
        }
        match c.get("name").and_then(Value::as_str) {
            Some(n) if !n.is_empty() && category_names.insert(n.to_string()) => {}
            _ => errs.push(format!("categories[{i}]: name must be a unique nonempty string")),
        }
    }

    let mut last_id: Option<u64> = None;
    for (i, a) in annotations.iter().enumerate() {
        let here = format!("annotations[{i}]");
        match a.get("id").and_then(Value::as_u64) {
            Some(id) => {
                if last_id.is_some_and(|l| id <= l) {
                    errs.push(format!("{here}: id {id} not strictly increasing"));
                }
                last_id = Some(id);
            }
            None => errs.push(format!("{here}: id must be an integer")),
        }
        let size = a.get("image_id").and_then(Value::as_u64).and_then(|id| image_sizes.get(&id));
        if size.is_none() {
            errs.push(format!("{here}: image_id does not name an image"));
        }
        if !a.get("category_id").and_then(Value::as_u64).is_some_and(|c| category_ids.contains(&c)) {
            errs.push(format!("{here}: category_id does not name a category"));
        }
        let bbox: Option<Vec<f64>> =
            a.get("bbox").and_then(Value::as_array).map(|b| b.iter().filter_map(Value::as_f64).collect());
        match bbox {
            Some(b) if b.len() == 4 => {
                if b[0] < 0.0 || b[1] < 0.0 || b[2] <= 0.0 || b[3] <= 0.0 {
                    errs.push(format!("{here}: bbox needs non-negative origin and positive size"));
                } else if let Some(&(w, h)) = size {
                    // two-decimal rounding can push an edge box past the border by 0.01
                    if b[0] + b[2] > w + 0.011 || b[1] + b[3] > h + 0.011 {
                        errs.push(format!("{here}: bbox exceeds its image"));
                    }
                }
            }
            _ => errs.push(format!("{here}: bbox must be four numbers")),
        }
        if !a.get("area").and_then(Value::as_f64).is_some_and(|v| v >= 0.0) {
            errs.push(format!("{here}: area must be a non-negative number"));
        }
        if !a.get("iscrowd").and_then(Value::as_u64).is_some_and(|v| v <= 1) {
            errs.push(format!("{here}: iscrowd must be 0 or 1"));
        }
    }
    errs
}
