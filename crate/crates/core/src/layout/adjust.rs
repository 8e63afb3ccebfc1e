//! Statistical size and position adjustment of a proposed layout.

use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;
use core::ops::Range;

use super::{InstanceSpec, Layout};
use crate::geometry::{clamp_to_canvas, overlap_ratio, BBox};
use crate::stats::{sample_empirical, uniform, CategoryStats, StatsTable};
use crate::Rng;

/// Range of the empirical weight in the size blend.
pub const BLEND_RANGE: Range<f64> = 0.1..0.2;

/// Range of the center displacement, as a fraction of the canvas.
pub const STEP_RANGE: Range<f64> = 0.05..0.15;

/// Candidate moves in tie-break order. `N` points towards `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Stay,
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Direction {
    pub const ALL: [Direction; 9] = [
        Direction::Stay,
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
    ];

    /// Unit displacement; diagonals have length one as well.
    pub fn unit(self) -> (f64, f64) {
        let d = FRAC_1_SQRT_2;
        match self {
            Direction::Stay => (0.0, 0.0),
            Direction::N => (0.0, -1.0),
            Direction::NE => (d, -d),
            Direction::E => (1.0, 0.0),
            Direction::SE => (d, d),
            Direction::S => (0.0, 1.0),
            Direction::SW => (-d, d),
            Direction::W => (-1.0, 0.0),
            Direction::NW => (-d, -d),
        }
    }
}

/// Weighted average of the empirical and current width/aspect.
pub fn blend_size(old_width: f64, old_aspect: f64, emp_width: f64, emp_aspect: f64, alpha: f64) -> (f64, f64) {
    (alpha * emp_width + (1.0 - alpha) * old_width, alpha * emp_aspect + (1.0 - alpha) * old_aspect)
}

/// Resizes around the unchanged center with a fixed empirical sample and weight.
pub fn adjust_size_with(inst: &InstanceSpec, emp_width: f64, emp_aspect: f64, alpha: f64) -> InstanceSpec {
    let b = inst.bbox;
    let (width, aspect) = blend_size(b.width(), b.aspect(), emp_width, emp_aspect, alpha);
    let (cx, cy) = b.center();
    let resized = BBox::from_center(cx, cy, width, width * aspect).expect("blended extent stays positive");
    InstanceSpec { bbox: clamp_to_canvas(&resized), ..inst.clone() }
}

/// Pulls the instance's size towards its category's empirical size.
pub fn adjust_size(inst: &InstanceSpec, stats: &CategoryStats, rng: &mut Rng) -> InstanceSpec {
    let (emp_width, emp_aspect) = sample_empirical(stats, rng);
    let alpha = uniform(rng, BLEND_RANGE.start, BLEND_RANGE.end);
    adjust_size_with(inst, emp_width, emp_aspect, alpha)
}

/// Moves the instance by `step` in whichever of the nine [`Direction`]s
/// gives the least overlap with the other instances of `layout`.
pub fn adjust_position_with_step(inst: &InstanceSpec, layout: &Layout, step: f64) -> InstanceSpec {
    let others: Vec<BBox> = layout.instances.iter().filter(|o| o.id != inst.id).map(|o| o.bbox).collect();
    let mut best: Option<(f64, BBox)> = None;
    for dir in Direction::ALL {
        let (dx, dy) = dir.unit();
        let candidate = clamp_to_canvas(&inst.bbox.translate(dx * step, dy * step));
        let ratio = overlap_ratio(&candidate, &others);
        if best.is_none_or(|(r, _)| ratio < r) {
            best = Some((ratio, candidate));
        }
    }
    InstanceSpec { bbox: best.expect("nine candidates").1, ..inst.clone() }
}

pub fn adjust_position(inst: &InstanceSpec, layout: &Layout, rng: &mut Rng) -> InstanceSpec {
    let step = uniform(rng, STEP_RANGE.start, STEP_RANGE.end);
    adjust_position_with_step(inst, layout, step)
}

/// One sequential sweep, largest instance first: size towards the
/// category statistics (when the category is known), then position.
pub fn adjust_layout(layout: &Layout, stats: &StatsTable, rng: &mut Rng) -> Layout {
    let mut out = layout.clone();
    let mut order: Vec<usize> = (0..out.instances.len()).collect();
    order.sort_by(|&a, &b| out.instances[b].bbox.area().total_cmp(&out.instances[a].bbox.area()));
    for idx in order {
        let mut inst = out.instances[idx].clone();
        if let Some(entry) = stats.get(&inst.cate) {
            inst = adjust_size(&inst, entry, rng);
        }
        inst = adjust_position(&inst, &out, rng);
        out.instances[idx] = inst;
    }
    out
}
