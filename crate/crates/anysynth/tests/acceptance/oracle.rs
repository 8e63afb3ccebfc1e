//! Reference computations written without calling into the engine.

use anysynth_core::{rng_from_seed, BBox, InstanceSpec, Layout, Rng};
use rand::Rng as _;

fn axis_cells(lo: f64, hi: f64, n: usize) -> usize {
    (0..n)
        .filter(|&i| {
            let c = (i as f64 + 0.5) / n as f64;
            c >= lo && c < hi
        })
        .count()
}

/// Area covered by grid cells whose centers fall inside both boxes.
pub fn raster_intersection(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let xs = axis_cells(a[0].max(b[0]), a[2].min(b[2]), n);
    let ys = axis_cells(a[1].max(b[1]), a[3].min(b[3]), n);
    (xs * ys) as f64 / (n * n) as f64
}

pub fn raster_iou(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let inter = raster_intersection(a, b, n);
    let union = raster_intersection(a, a, n) + raster_intersection(b, b, n) - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn exact_intersection(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

pub fn exact_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = exact_intersection(a, b);
    let area = |c: [f64; 4]| (c[2] - c[0]) * (c[3] - c[1]);
    inter / (area(a) + area(b) - inter)
}

pub fn overlap_ratio(target: [f64; 4], others: &[[f64; 4]]) -> f64 {
    let area = (target[2] - target[0]) * (target[3] - target[1]);
    others.iter().map(|o| exact_intersection(target, *o)).sum::<f64>() / area
}

pub fn mean_overlap(layout: &Layout) -> f64 {
    let boxes: Vec<[f64; 4]> = layout.instances.iter().map(|i| i.bbox.corners()).collect();
    let total: f64 = (0..boxes.len())
        .map(|i| {
            let others: Vec<[f64; 4]> = boxes.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| *b).collect();
            overlap_ratio(boxes[i], &others)
        })
        .sum();
    total / boxes.len() as f64
}

fn clamp(c: [f64; 4]) -> [f64; 4] {
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

/// The nine moved boxes in tie-break order: stay, N, NE, E, SE, S, SW, W, NW
/// with N towards y = 0.
pub fn nine_candidates(me: [f64; 4], step: f64) -> [[f64; 4]; 9] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = [(0.0, 0.0), (0.0, -1.0), (s, -s), (1.0, 0.0), (s, s), (0.0, 1.0), (-s, s), (-1.0, 0.0), (-s, -s)];
    dirs.map(|(dx, dy)| clamp([me[0] + dx * step, me[1] + dy * step, me[2] + dx * step, me[3] + dy * step]))
}

/// Index and box of the first candidate with the smallest overlap ratio.
pub fn argmin_move(layout: &Layout, id: u32, step: f64) -> (usize, [f64; 4]) {
    let me = layout.instances.iter().find(|i| i.id == id).unwrap().bbox.corners();
    let others: Vec<[f64; 4]> = layout.instances.iter().filter(|i| i.id != id).map(|i| i.bbox.corners()).collect();
    let mut best = (0, f64::INFINITY, me);
    for (k, c) in nine_candidates(me, step).into_iter().enumerate() {
        let r = overlap_ratio(c, &others);
        if r < best.1 {
            best = (k, r, c);
        }
    }
    (best.0, best.2)
}

pub fn random_box(rng: &mut Rng, min_side: f64, max_side: f64) -> [f64; 4] {
    let w = rng.random_range(min_side..max_side);
    let h = rng.random_range(min_side..max_side);
    let x = rng.random_range(0.0..=1.0 - w);
    let y = rng.random_range(0.0..=1.0 - h);
    [x, y, x + w, y + h]
}

pub fn bbox(c: [f64; 4]) -> BBox {
    BBox::new(c[0], c[1], c[2], c[3]).unwrap()
}

pub fn random_layout(seed: u64, cates: &[&str]) -> Layout {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=6);
    let instances = (0..n)
        .map(|id| {
            let cate = cates[rng.random_range(0..cates.len())];
            InstanceSpec {
                id,
                label: cate.to_string(),
                desc: format!("a {cate}"),
                cate: cate.to_string(),
                bbox: bbox(random_box(&mut rng, 0.08, 0.5)),
                ref_image: None,
            }
        })
        .collect();
    Layout { scene: "random".into(), style_ref: None, instances }
}

/// Population mean and standard deviation, two passes.
pub fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}
