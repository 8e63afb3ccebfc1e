//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p anysynth --test acceptance`.

mod oracle;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anysynth::coco::{check_coco, emit_coco, fit_from_coco, read_boxes};
use anysynth::pipeline::{run_pipeline, PipelineConfig, RunReport};
use anysynth::protocol::{BackendSpec, Endpoint, Role};
use anysynth_core::layout::{adjust_position_with_step, STEP_RANGE};
use anysynth_core::seed::derive_seed;
use anysynth_core::stats::{fit_category_stats, ReferenceSample};
use anysynth_core::{
    adjust_layout, adjust_position, iou, rng_from_seed, sample_empirical, select_best, select_best_with, style_lambda,
    yolo_lines, AnnotationDocument, CandidateImage, CategoryRegistry, CategoryStats, CoreError, ScoredCandidate,
    SelectionMode, StatsTable, StyleSchedule,
};
use rand::Rng as _;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn info(&self, id: &str, name: &str, detail: String) {
        println!("INFO [{id}] {name}: {detail}");
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_config(dir: &Path, text: &str) -> (PipelineConfig, RunReport, Duration) {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    let out = run_pipeline(&cfg).unwrap();
    (cfg, out.report, out.wall_time)
}

fn sim_run(images: u32, extra: &str, generator: &str, detectors: &[&str]) -> String {
    let dets: Vec<String> = detectors.iter().map(|d| format!("{d:?}")).collect();
    format!(
        "categories = [\"dog\", \"person\", \"car\", \"umbrella\", \"kite\"]\nimages = {images}\noutput = \"out\"\n{extra}\n\
         [backends]\ngenerator = {generator:?}\ndetectors = [{}]\nscorer = \"sim:scorer\"\n",
        dets.join(", ")
    )
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn documents(out: &Path) -> Vec<AnnotationDocument> {
    fs::read_to_string(out.join("annotations/documents.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn geometry(g: &mut Gate) {
    let started = Instant::now();
    let mut rng = rng_from_seed(0xA1);
    let (mut worst_iou, mut worst_inter) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let a = oracle::random_box(&mut rng, 0.02, 1.0);
        let b = oracle::random_box(&mut rng, 0.02, 1.0);
        let (ba, bb) = (oracle::bbox(a), oracle::bbox(b));
        worst_iou = worst_iou.max((iou(&ba, &bb) - oracle::raster_iou(a, b, 4000)).abs());
        worst_inter = worst_inter.max((ba.intersection_area(&bb) - oracle::raster_intersection(a, b, 4000)).abs());
    }
    let t = started.elapsed();
    g.report(
        "1",
        "geometry vs raster oracle",
        worst_iou <= 2e-3 && worst_inter <= 2e-3 && t < Duration::from_secs(30),
        format!("10000 pairs, max |d iou| {worst_iou:.2e}, max |d intersection| {worst_inter:.2e} (tol 2e-3), {t:.2?} (limit 30 s)"),
    );
}

fn adjustment(g: &mut Gate) {
    const CATES: [&str; 3] = ["dog", "person", "kite"];
    let corpus: Vec<_> = (0..500).map(|s| oracle::random_layout(1000 + s, &CATES)).collect();
    let (mut checked, mut agree) = (0, 0);
    for (s, layout) in corpus.iter().enumerate() {
        let s = s as u64;
        for inst in &layout.instances {
            let step = STEP_RANGE.start + (STEP_RANGE.end - STEP_RANGE.start) * rng_from_seed(s).random::<f64>();
            let got = adjust_position(inst, layout, &mut rng_from_seed(s)).bbox.corners();
            let (want_idx, want) = oracle::argmin_move(layout, inst.id, step);
            let got_idx = oracle::nine_candidates(inst.bbox.corners(), step).iter().position(|c| *c == got);
            checked += 1;
            if got == want
                && got_idx == Some(want_idx)
                && adjust_position_with_step(inst, layout, step).bbox.corners() == got
            {
                agree += 1;
            }
        }
    }
    g.report(
        "2a",
        "adjust_position vs 9-candidate enumeration",
        agree == checked,
        format!("{agree}/{checked} instances over 500 layouts match index and box exactly"),
    );

    let empty = StatsTable::new("none");
    let raised = corpus
        .iter()
        .enumerate()
        .filter(|(s, l)| {
            let out = adjust_layout(l, &empty, &mut rng_from_seed(*s as u64));
            oracle::mean_overlap(&out) > oracle::mean_overlap(l) + 1e-12
        })
        .count();
    g.report(
        "2b",
        "mean overlap never increases (position adjustment)",
        raised == 0,
        format!("{raised}/500 layouts increased"),
    );

    let samples: Vec<(String, f64, f64)> = corpus
        .iter()
        .flat_map(|l| l.instances.iter().map(|i| (i.cate.clone(), i.bbox.width(), i.bbox.height())))
        .collect();
    let fitted = fit_category_stats(
        "corpus",
        samples.iter().map(|(c, w, h)| ReferenceSample { category: c, width: *w, height: *h }),
    )
    .unwrap();
    let raised = corpus
        .iter()
        .enumerate()
        .filter(|(s, l)| {
            let out = adjust_layout(l, &fitted, &mut rng_from_seed(*s as u64));
            oracle::mean_overlap(&out) > oracle::mean_overlap(l) + 1e-12
        })
        .count();
    g.info("2b", "with size blending from corpus-fitted stats", format!("{raised}/500 layouts increased (not gated)"));
}

fn stats(g: &mut Gate) {
    let normal = CategoryStats {
        category: "x".into(),
        width_mean: 0.3,
        width_std: 0.1,
        aspect_mean: 0.3,
        aspect_std: 0.1,
        sample_count: 1000,
    };
    let (widths, aspects): (Vec<f64>, Vec<f64>) =
        (0..1000).map(|s| sample_empirical(&normal, &mut rng_from_seed(s))).unzip();
    let (_, ws) = oracle::two_pass(&widths);
    let (_, as_) = oracle::two_pass(&aspects);
    let ok = |s: f64| (s / 0.01 - 1.0).abs() <= 0.2;
    g.report(
        "3a",
        "sample_empirical concentration",
        ok(ws) && ok(as_),
        format!("std over 1000 seeds: width {ws:.5}, aspect {as_:.5} (target 0.01 within 20%)"),
    );

    let text = fs::read_to_string(fixture("coco_50.json")).unwrap();
    let fit = fit_from_coco(&text, "fixture", None).unwrap().table;
    let boxes = read_boxes(&text).unwrap();
    let mut worst = 0.0f64;
    let mut names: BTreeSet<String> = boxes.iter().map(|b| b.category.clone()).collect();
    names.insert("*".into());
    for name in &names {
        let sel: Vec<_> = boxes.iter().filter(|b| name == "*" || &b.category == name).collect();
        let widths: Vec<f64> = sel.iter().map(|b| b.bbox[2] / b.image_width).collect();
        let aspects: Vec<f64> =
            sel.iter().map(|b| (b.bbox[3] / b.image_height) / (b.bbox[2] / b.image_width)).collect();
        let (wm, ws) = oracle::two_pass(&widths);
        let (am, as_) = oracle::two_pass(&aspects);
        let e = if name == "*" { fit.global.as_ref().unwrap() } else { &fit.entries[name] };
        for (got, want) in [(e.width_mean, wm), (e.width_std, ws), (e.aspect_mean, am), (e.aspect_std, as_)] {
            worst = worst.max((got - want).abs() / want.abs());
        }
        if e.sample_count != sel.len() as u64 {
            worst = f64::INFINITY;
        }
    }
    g.report(
        "3b",
        "fit_category_stats vs two-pass oracle",
        worst <= 1e-12 && boxes.len() == 50,
        format!("{} boxes, {} entries, max relative error {worst:.2e} (tol 1e-12)", boxes.len(), names.len()),
    );
}

fn candidate(q: f64, p: f64, accepted: bool) -> ScoredCandidate {
    ScoredCandidate {
        image: CandidateImage { path: String::new(), width: 1, height: 1, generator: String::new(), seed: 0 },
        reports: Vec::new(),
        quality: q,
        position: p,
        accepted,
    }
}

fn brute_argmax(cands: &[ScoredCandidate], score: impl Fn(&ScoredCandidate) -> f64) -> Option<usize> {
    let mut best = None;
    for (i, c) in cands.iter().enumerate() {
        if c.accepted && best.is_none_or(|b: usize| score(c) > score(&cands[b])) {
            best = Some(i);
        }
    }
    best
}

fn filtering(g: &mut Gate) {
    let mut rng = rng_from_seed(0xF1);
    let mut agree = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=8);
        // coarse grid so ties actually occur
        let cands: Vec<_> = (0..k)
            .map(|_| {
                candidate(
                    rng.random_range(0..8) as f64 / 8.0,
                    rng.random_range(0..8) as f64 / 8.0,
                    rng.random_bool(0.75),
                )
            })
            .collect();
        let want = brute_argmax(&cands, |c| c.quality + c.position);
        let got = select_best(&cands);
        if want.map_or(got == Err(CoreError::AllDiscarded), |w| got == Ok(w)) {
            agree += 1;
        }
    }
    g.report("4a", "select_best vs brute-force argmax", agree == 10_000, format!("{agree}/10000 score vectors agree"));

    let tmp = tempfile::tempdir().unwrap();
    let extra =
        "instances_per_image = [3, 3]\ncandidates = 1\nmax_regenerations = 0\nparallelism = 8\nmaster_seed = 2024";
    let (_, r, _) = run_config(
        tmp.path(),
        &sim_run(
            5000,
            extra,
            "sim:generator,noise=0,width=16,height=16",
            &["sim:detector,name=a,miss_rate=0.2", "sim:detector,name=b,miss_rate=0.2"],
        ),
    );
    let n = r.candidates_attempted as f64;
    let frac = r.candidates_accepted as f64 / n;
    let p = (1.0f64 - 0.2 * 0.2).powi(3);
    let se = (p * (1.0 - p) / n).sqrt();
    g.report(
        "4b",
        "acceptance fraction, two detectors m=0.2, n=3, K=1",
        r.candidates_attempted == 5000 && (frac - p).abs() <= 3.0 * se,
        format!(
            "{}/{} accepted = {frac:.4}, expected {p:.6} +- {:.4} (3 SE)",
            r.candidates_accepted,
            r.candidates_attempted,
            3.0 * se
        ),
    );

    let default_k = PipelineConfig::from_toml(&sim_run(1, "", "sim:generator", &["sim:detector"])).unwrap().candidates;
    let mut structural = default_k == 4;
    let mut detail = format!("default K = {default_k}");
    for (mode, name) in
        [(SelectionMode::Quality, "quality"), (SelectionMode::Position, "position"), (SelectionMode::Both, "both")]
    {
        let tmp = tempfile::tempdir().unwrap();
        let (_, r, _) = run_config(
            tmp.path(),
            &sim_run(
                30,
                &format!("selection = \"{name}\"\ninstances_per_image = [2, 5]"),
                "sim:generator,noise=0.02",
                &["sim:detector,name=a,miss_rate=0.15,jitter=0.04", "sim:detector,name=b,miss_rate=0.15,jitter=0.04"],
            ),
        );
        let mut ok = r.selection == mode && r.candidates_per_layout == 4 && r.images_emitted > 0;
        for img in &r.images {
            for a in &img.attempts {
                ok &= a.candidates.len() == 4;
            }
            if let Some(sel) = &img.selected {
                let a = &img.attempts[sel.regeneration as usize];
                let cands: Vec<_> = a.candidates.iter().map(|c| candidate(c.quality, c.position, c.accepted)).collect();
                let want = brute_argmax(&cands, |c| mode.score(c.quality, c.position));
                ok &= want == Some(sel.candidate as usize)
                    && select_best_with(&cands, mode) == Ok(sel.candidate as usize);
            }
        }
        structural &= ok;
        detail.push_str(&format!(", {name}: {} emitted, {} candidates", r.images_emitted, r.candidates_attempted));
    }
    g.report("4c", "K=4 default with quality/position/both selection", structural, detail);
}

fn schedule(g: &mut Gate) {
    let s = StyleSchedule::default();
    let bad: Vec<u32> = (0..50).filter(|&t| style_lambda(&s, t) != Ok(if t <= 35 { 0.7 } else { 0.3 })).collect();
    g.report(
        "5",
        "style schedule exactness",
        bad.is_empty() && s.per_step().len() == 50,
        format!("t in 0..=35 -> 0.7, 36..=49 -> 0.3; {} mismatches", bad.len()),
    );
}

fn determinism(g: &mut Gate) {
    let started = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = |par: u32| {
        sim_run(
            50,
            &format!("master_seed = 77\nparallelism = {par}"),
            "sim:generator,noise=0.02,width=96,height=96",
            &["sim:detector,name=a,miss_rate=0.25,jitter=0.03", "sim:detector,name=b,miss_rate=0.25,jitter=0.03"],
        )
    };
    run_config(a.path(), &text(1));
    run_config(b.path(), &text(8));
    let (ta, tb) = (tree(&a.path().join("out")), tree(&b.path().join("out")));
    let t = started.elapsed();
    let differing = ta.iter().zip(&tb).filter(|(x, y)| x != y).count() + ta.len().abs_diff(tb.len());
    g.report(
        "6",
        "parallelism 1 vs 8 byte-identical",
        differing == 0 && t < Duration::from_secs(60),
        format!("50 images, {} files, {differing} differ, both runs in {t:.2?} (limit 60 s)", ta.len()),
    );
}

fn formats(g: &mut Gate) {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, r, _) = run_config(
        tmp.path(),
        &sim_run(
            100,
            "master_seed = 5",
            "sim:generator,noise=0.02,width=320,height=240",
            &["sim:detector,name=a,miss_rate=0.2,jitter=0.02", "sim:detector,name=b,miss_rate=0.2,jitter=0.02"],
        ),
    );
    let docs = documents(&cfg.output);
    let registry = CategoryRegistry::new(cfg.categories.clone());

    let text = emit_coco(&docs, &registry).unwrap();
    let parsed = read_boxes(&text).unwrap();
    let expected: Vec<_> = docs.iter().flat_map(|d| d.instances.iter().map(move |i| (d, i))).collect();
    let mut worst = if parsed.len() == expected.len() { 0.0f64 } else { f64::INFINITY };
    for (got, (doc, inst)) in parsed.iter().zip(&expected) {
        let (w, h) = (doc.image.width as f64, doc.image.height as f64);
        let want = [inst.bbox.x_min() * w, inst.bbox.y_min() * h, inst.bbox.width() * w, inst.bbox.height() * h];
        for (x, y) in got.bbox.iter().zip(want) {
            worst = worst.max((x - y).abs());
        }
        if got.category != inst.cate {
            worst = f64::INFINITY;
        }
    }
    g.report(
        "7a",
        "COCO emit/parse round-trip",
        worst <= 1.0 / 200.0 + 1e-9,
        format!("{} boxes, max error {worst:.4} px (tol 1/200 px)", parsed.len()),
    );

    let mut worst = 0.0f64;
    let mut lines_seen = 0;
    for doc in &docs {
        for (line, inst) in yolo_lines(doc, &registry).unwrap().iter().zip(&doc.instances) {
            let f: Vec<f64> = line.split(' ').map(|t| t.parse().unwrap()).collect();
            let back = [f[1] - f[3] / 2.0, f[2] - f[4] / 2.0, f[1] + f[3] / 2.0, f[2] + f[4] / 2.0];
            for (x, y) in back.iter().zip(inst.bbox.corners()) {
                worst = worst.max((x - y).abs());
            }
            lines_seen += 1;
        }
    }
    g.report(
        "7b",
        "YOLO inverse conversion",
        worst <= 1e-6,
        format!("{lines_seen} lines, max error {worst:.2e} (tol 1e-6)"),
    );

    let shipped = fs::read_to_string(cfg.output.join("annotations/coco.json")).unwrap();
    let violations = check_coco(&shipped);
    g.report(
        "7c",
        "COCO schema check on a 100-image run",
        violations.is_empty() && r.images_requested == 100,
        format!(
            "{} images emitted, {} violations{}",
            r.images_emitted,
            violations.len(),
            violations.first().map(|v| format!(": {v}")).unwrap_or_default()
        ),
    );
}

fn discard_audit(g: &mut Gate) {
    let tmp = tempfile::tempdir().unwrap();
    let detectors = ["sim:detector,name=a,miss_rate=0.3,jitter=0.03", "sim:detector,name=b,miss_rate=0.3,jitter=0.05"];
    let (cfg, r, _) = run_config(
        tmp.path(),
        &sim_run(200, "master_seed = 9\nparallelism = 4", "sim:generator,noise=0.02,width=64,height=64", &detectors),
    );
    let mut endpoints: Vec<Endpoint> = detectors
        .iter()
        .map(|d| {
            Endpoint::connect(&d.parse::<BackendSpec>().unwrap(), Role::Detector, Duration::from_secs(30)).unwrap()
        })
        .collect();
    let (mut instances, mut violations) = (0, 0);
    let docs = documents(&cfg.output);
    for doc in &docs {
        let image = cfg.output.join(&doc.image.path).to_string_lossy().into_owned();
        let vocab: Vec<String> =
            doc.instances.iter().map(|i| i.cate.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let found: Vec<_> = endpoints
            .iter_mut()
            .enumerate()
            .map(|(d, ep)| ep.detect(&image, &vocab, Some(derive_seed(doc.image.seed, &[d as u64]))).unwrap())
            .collect();
        for inst in &doc.instances {
            instances += 1;
            let seen = found.iter().flatten().any(|det| {
                det.cate.eq_ignore_ascii_case(&inst.cate)
                    && oracle::exact_iou(det.bbox.corners(), inst.bbox.corners()) > 0.5
            });
            if !seen {
                violations += 1;
            }
        }
    }
    g.report(
        "8",
        "discard-rule audit by re-detection",
        violations == 0 && docs.len() as u32 == r.images_emitted && r.images_emitted > 0,
        format!(
            "{} images emitted ({} abandoned), {instances} annotated instances, {violations} unmatched by every detector",
            r.images_emitted, r.layouts_abandoned
        ),
    );
    for ep in endpoints {
        let _ = ep.shutdown();
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut g = Gate { failed: 0 };
    geometry(&mut g);
    adjustment(&mut g);
    stats(&mut g);
    filtering(&mut g);
    schedule(&mut g);
    determinism(&mut g);
    formats(&mut g);
    discard_audit(&mut g);
    println!("acceptance: {} failing, {:.2?}", g.failed, started.elapsed());
    if g.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
