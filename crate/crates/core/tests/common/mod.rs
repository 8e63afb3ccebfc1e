//! Independent oracles shared by the integration tests. Nothing here calls
//! into the geometry module it is used to check.

#![allow(dead_code)]

use anysynth_core::{BBox, InstanceSpec, Layout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of grid cell centers of an `n`-cell unit axis inside `[lo, hi]`.
pub fn axis_cells(lo: f64, hi: f64, n: usize) -> usize {
    (0..n)
        .filter(|&i| {
            let c = (i as f64 + 0.5) / n as f64;
            c >= lo && c < hi
        })
        .count()
}

/// Rasterized intersection area: cells of an `n × n` grid whose centers lie
/// in both boxes. Axis-aligned, so the 2-D cell set is a product of 1-D sets.
pub fn raster_intersection(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let xs = axis_cells(a[0].max(b[0]), a[2].min(b[2]), n);
    let ys = axis_cells(a[1].max(b[1]), a[3].min(b[3]), n);
    (xs * ys) as f64 / (n * n) as f64
}

pub fn raster_area(a: [f64; 4], n: usize) -> f64 {
    raster_intersection(a, a, n)
}

pub fn raster_iou(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let inter = raster_intersection(a, b, n);
    let union = raster_area(a, n) + raster_area(b, n) - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Exact analytic intersection, written out independently of the crate.
pub fn exact_intersection(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

pub fn exact_overlap_ratio(target: [f64; 4], others: &[[f64; 4]]) -> f64 {
    let area = (target[2] - target[0]) * (target[3] - target[1]);
    others.iter().map(|o| exact_intersection(target, *o)).sum::<f64>() / area
}

/// Shift-inward clamp, per axis.
pub fn oracle_clamp(c: [f64; 4]) -> [f64; 4] {
    fn axis(lo: f64, hi: f64) -> (f64, f64) {
        let e = hi - lo;
        if e >= 1.0 {
            (0.0, 1.0)
        } else if lo < 0.0 {
            (0.0, e)
        } else if hi > 1.0 {
            (1.0 - e, 1.0)
        } else {
            (lo, hi)
        }
    }
    let (x0, x1) = axis(c[0], c[2]);
    let (y0, y1) = axis(c[1], c[3]);
    [x0, y0, x1, y1]
}

pub fn random_box(rng: &mut ChaCha8Rng, min_side: f64, max_side: f64) -> [f64; 4] {
    let w = rng.random_range(min_side..max_side);
    let h = rng.random_range(min_side..max_side);
    let x = rng.random_range(0.0..=1.0 - w);
    let y = rng.random_range(0.0..=1.0 - h);
    [x, y, x + w, y + h]
}

pub fn bbox(c: [f64; 4]) -> BBox {
    BBox::new(c[0], c[1], c[2], c[3]).unwrap()
}

pub fn random_layout(rng: &mut ChaCha8Rng, cates: &[&str]) -> Layout {
    let n = rng.random_range(2..=6);
    let instances = (0..n)
        .map(|id| {
            let cate = cates[rng.random_range(0..cates.len())];
            InstanceSpec {
                id,
                label: cate.to_string(),
                desc: format!("a {cate}"),
                cate: cate.to_string(),
                bbox: bbox(random_box(rng, 0.08, 0.5)),
                ref_image: None,
            }
        })
        .collect();
    Layout { scene: "random".into(), style_ref: None, instances }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mean_overlap(layout: &Layout) -> f64 {
    let boxes: Vec<[f64; 4]> = layout.instances.iter().map(|i| i.bbox.corners()).collect();
    let total: f64 = (0..boxes.len())
        .map(|i| {
            let others: Vec<[f64; 4]> = boxes.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| *b).collect();
            exact_overlap_ratio(boxes[i], &others)
        })
        .sum();
    total / boxes.len() as f64
}
