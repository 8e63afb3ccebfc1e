//! Detector matching, the discard rule, and best-candidate selection.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{iou, BBox};
use crate::layout::{same_category, Layout};

/// A detection counts as an instance only above this IoU.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cate: String,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default)]
    pub detector: String,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(CoreError::InvalidConfidence(self.confidence));
        }
        if !self.bbox.in_canvas() {
            return Err(CoreError::OutsideCanvas);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub instance_id: u32,
    pub matched: bool,
    /// IoU of the matched detection, or the best same-category IoU seen.
    pub best_iou: f64,
    /// Confidence of the matched detection; 0 when unmatched.
    pub best_confidence: f64,
    pub detection: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub detector: String,
    pub instances: Vec<InstanceMatch>,
}

impl MatchReport {
    pub fn is_matched(&self, instance_id: u32) -> bool {
        self.instances.iter().any(|m| m.instance_id == instance_id && m.matched)
    }

    pub fn matched_ids(&self) -> Vec<u32> {
        self.instances.iter().filter(|m| m.matched).map(|m| m.instance_id).collect()
    }
}

fn lexicographic(a: &BBox, b: &BBox) -> Ordering {
    a.corners()
        .iter()
        .zip(b.corners().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Greedy one-to-one matching in descending IoU order.
///
/// A pair qualifies when categories agree (case-insensitively) and IoU
/// exceeds [`MATCH_IOU`]. Ties in IoU are broken by detection box
/// (lexicographic), then higher confidence, then layout order, so the
/// matched instance set does not depend on the order of `detections`.
pub fn match_detections(layout: &Layout, detections: &[Detection], detector: &str) -> MatchReport {
    struct Pair {
        iou: f64,
        det: usize,
        inst: usize,
    }

    let mut best_iou = alloc::vec![0.0f64; layout.instances.len()];
    let mut pairs = Vec::new();
    for (d, det) in detections.iter().enumerate() {
        for (i, inst) in layout.instances.iter().enumerate() {
            if !same_category(&det.cate, &inst.cate) {
                continue;
            }
            let v = iou(&det.bbox, &inst.bbox);
            best_iou[i] = best_iou[i].max(v);
            if v > MATCH_IOU {
                pairs.push(Pair { iou: v, det: d, inst: i });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then_with(|| lexicographic(&detections[a.det].bbox, &detections[b.det].bbox))
            .then_with(|| detections[b.det].confidence.total_cmp(&detections[a.det].confidence))
            .then_with(|| a.inst.cmp(&b.inst))
            .then_with(|| a.det.cmp(&b.det))
    });

    let mut entries: Vec<InstanceMatch> = layout
        .instances
        .iter()
        .zip(&best_iou)
        .map(|(inst, &best)| InstanceMatch {
            instance_id: inst.id,
            matched: false,
            best_iou: best,
            best_confidence: 0.0,
            detection: None,
        })
        .collect();
    let mut det_used = alloc::vec![false; detections.len()];
    for p in pairs {
        if det_used[p.det] || entries[p.inst].matched {
            continue;
        }
        det_used[p.det] = true;
        let e = &mut entries[p.inst];
        e.matched = true;
        e.best_iou = p.iou;
        e.best_confidence = detections[p.det].confidence;
        e.detection = Some(p.det);
    }
    MatchReport { detector: String::from(detector), instances: entries }
}

/// Discard rule: reject iff some instance is unmatched in every report.
///
/// With no reports there is no evidence for any instance, so the
/// candidate is rejected.
pub fn accept_candidate(reports: &[MatchReport]) -> bool {
    if reports.is_empty() {
        return false;
    }
    let mut ids: Vec<u32> = reports.iter().flat_map(|r| r.instances.iter().map(|m| m.instance_id)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.iter().all(|&id| reports.iter().any(|r| r.is_matched(id)))
}

/// Mean matched confidence over every (detector, instance) pair; unmatched
/// pairs count as zero.
pub fn position_score(reports: &[MatchReport]) -> f64 {
    let (sum, n) = reports
        .iter()
        .flat_map(|r| r.instances.iter())
        .fold((0.0, 0usize), |(s, n), m| (s + if m.matched { m.best_confidence } else { 0.0 }, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).clamp(0.0, 1.0)
    }
}

/// A generated image as returned by a generator backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateImage {
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub generator: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub image: CandidateImage,
    pub reports: Vec<MatchReport>,
    pub quality: f64,
    pub position: f64,
    pub accepted: bool,
}

impl ScoredCandidate {
    /// Scores a candidate from its detector reports and normalized quality.
    pub fn new(image: CandidateImage, reports: Vec<MatchReport>, quality: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&quality) {
            return Err(CoreError::InvalidConfidence(quality));
        }
        let accepted = accept_candidate(&reports);
        let position = position_score(&reports);
        Ok(Self { image, reports, quality, position, accepted })
    }

    pub fn total(&self) -> f64 {
        self.quality + self.position
    }
}

/// Which scores rank accepted candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Quality,
    Position,
    #[default]
    Both,
}

impl SelectionMode {
    pub fn score(self, quality: f64, position: f64) -> f64 {
        match self {
            SelectionMode::Quality => quality,
            SelectionMode::Position => position,
            SelectionMode::Both => quality + position,
        }
    }
}

/// Index of the accepted candidate with the highest quality + position.
pub fn select_best(candidates: &[ScoredCandidate]) -> Result<usize> {
    select_best_with(candidates, SelectionMode::Both)
}

/// Lowest index wins ties; rejected candidates are never chosen.
pub fn select_best_with(candidates: &[ScoredCandidate], mode: SelectionMode) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate().filter(|(_, c)| c.accepted) {
        let s = mode.score(c.quality, c.position);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(CoreError::AllDiscarded)
}
