mod common;

use anysynth_core::stats::{fit_category_stats, ReferenceSample, EMPIRICAL_DRAWS};
use anysynth_core::{rng_from_seed, sample_empirical, CategoryStats};
use common::seeded;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn fit_matches_two_pass_oracle_on_fifty_boxes() {
    let mut rng = seeded(50);
    let cats = ["dog", "person", "bicycle"];
    let boxes: Vec<(&str, f64, f64)> =
        (0..50).map(|i| (cats[i % 3], rng.random_range(0.02..0.9), rng.random_range(0.02..0.9))).collect();
    let table = fit_category_stats(
        "fixture",
        boxes.iter().map(|&(c, w, h)| ReferenceSample { category: c, width: w, height: h }),
    )
    .unwrap();
    for cat in cats {
        let widths: Vec<f64> = boxes.iter().filter(|b| b.0 == cat).map(|b| b.1).collect();
        let aspects: Vec<f64> = boxes.iter().filter(|b| b.0 == cat).map(|b| b.2 / b.1).collect();
        let (wm, ws) = two_pass(&widths);
        let (am, as_) = two_pass(&aspects);
        let e = table.get(cat).unwrap();
        assert_eq!(e.sample_count, widths.len() as u64);
        for (got, want) in [(e.width_mean, wm), (e.width_std, ws), (e.aspect_mean, am), (e.aspect_std, as_)] {
            assert!(rel_close(got, want, 1e-12), "{cat}: {got} vs {want}");
        }
    }
}

fn normal_stats(wm: f64, ws: f64, am: f64, as_: f64) -> CategoryStats {
    CategoryStats {
        category: "c".into(),
        width_mean: wm,
        width_std: ws,
        aspect_mean: am,
        aspect_std: as_,
        sample_count: 100,
    }
}

#[test]
fn sample_equals_replayed_average() {
    let stats = normal_stats(0.3, 0.1, 1.2, 0.3);
    for seed in 0..20 {
        let (w, a) = sample_empirical(&stats, &mut rng_from_seed(seed));
        let mut replay = rng_from_seed(seed);
        let wn = Normal::new(0.3, 0.1).unwrap();
        let an = Normal::new(1.2, 0.3).unwrap();
        let ow = (0..EMPIRICAL_DRAWS).map(|_| wn.sample(&mut replay)).sum::<f64>() / EMPIRICAL_DRAWS as f64;
        let oa = (0..EMPIRICAL_DRAWS).map(|_| an.sample(&mut replay)).sum::<f64>() / EMPIRICAL_DRAWS as f64;
        assert_eq!(w, ow.max(0.01));
        assert_eq!(a, oa.max(0.01));
    }
}

#[test]
fn mean_of_hundred_concentrates() {
    let stats = normal_stats(0.3, 0.1, 1.0, 0.0);
    let widths: Vec<f64> = (0..1000).map(|s| sample_empirical(&stats, &mut rng_from_seed(s)).0).collect();
    let (_, std) = two_pass(&widths);
    assert!((std - 0.01).abs() <= 0.2 * 0.01, "std {std}");
}

proptest! {
    #[test]
    fn outputs_are_finite(wm in 0.001..1.0f64, ws in 0.0..10.0f64, am in 0.001..50.0f64, as_ in 0.0..100.0f64, seed: u64) {
        let (w, a) = sample_empirical(&normal_stats(wm, ws, am, as_), &mut rng_from_seed(seed));
        prop_assert!(w.is_finite() && a.is_finite());
        prop_assert!(w >= 0.01 && a >= 0.01);
    }

    #[test]
    fn fitted_values_are_finite(boxes in prop::collection::vec((0.0001..1.0f64, 0.0001..1.0f64), 1..40)) {
        let table = fit_category_stats("p", boxes.iter().map(|&(w, h)| ReferenceSample { category: "x", width: w, height: h })).unwrap();
        let e = table.get("x").unwrap();
        prop_assert!(e.validate().is_ok());
        prop_assert!(e.width_std.is_finite() && e.aspect_std.is_finite());
    }
}
