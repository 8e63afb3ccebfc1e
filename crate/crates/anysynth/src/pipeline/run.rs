use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anysynth_core::annotate::CategoryRegistry;
use anysynth_core::layout::same_category;
use anysynth_core::seed::derive_seed;
use anysynth_core::{
    accept_candidate, adjust_layout, assemble, fallback_propose, match_detections, post_refine, rng_from_seed,
    sample_request, select_best_with, yolo_lines, AnnotationDocument, AnnotationExtras, AnnotationFormat,
    CandidateImage, CoreError, Detection, Layout, LayoutRequest, ScoredCandidate, SelectionMode, StatsTable,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ParsedBackends, PipelineConfig};
use crate::coco::emit_coco;
use crate::error::{Error, Result};
use crate::fsutil::{self, write_atomic};
use crate::protocol::{Endpoint, GenerateRequest, InstanceRef, Role};
use crate::sim::truth_path;
use crate::stats_file::load_stats;

/// Seed path component for the adjustment stream; candidate indices never reach it.
const ADJUST_STREAM: u64 = u64::MAX;

pub const WORK_DIR: &str = ".work";

/// One connected set of backends, used by one worker at a time.
pub struct Backends {
    pub proposer: Option<Endpoint>,
    pub generator: Endpoint,
    pub detectors: Vec<Endpoint>,
    pub scorer: Endpoint,
}

impl Backends {
    pub fn connect(specs: &ParsedBackends, timeout: Duration) -> Result<Self> {
        let proposer = specs.proposer.as_ref().map(|s| Endpoint::connect(s, Role::Proposer, timeout)).transpose()?;
        Ok(Self {
            proposer,
            generator: Endpoint::connect(&specs.generator, Role::Generator, timeout)?,
            detectors: specs
                .detectors
                .iter()
                .map(|s| Endpoint::connect(s, Role::Detector, timeout))
                .collect::<std::result::Result<_, _>>()?,
            scorer: Endpoint::connect(&specs.scorer, Role::Scorer, timeout)?,
        })
    }

    /// Detector names, made unique by suffixing the position when two collide.
    pub fn detector_labels(&self) -> Vec<String> {
        let names: Vec<&str> = self.detectors.iter().map(Endpoint::name).collect();
        names
            .iter()
            .enumerate()
            .map(|(d, n)| if names.iter().filter(|m| *m == n).count() > 1 { format!("{n}#{d}") } else { n.to_string() })
            .collect()
    }

    pub fn shutdown(self) {
        let all = self.proposer.into_iter().chain([self.generator]).chain(self.detectors).chain([self.scorer]);
        for ep in all {
            let _ = ep.shutdown();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStatus {
    Emitted,
    /// Every candidate of every layout was discarded.
    Abandoned,
    /// A backend or I/O error stopped this image.
    Failed,
    /// Not started because the run was aborting.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub seed: u64,
    pub quality: f64,
    pub position: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutAttempt {
    pub regeneration: u32,
    pub seed: u64,
    /// The proposer kept breaking rules, so the built-in proposer stepped in.
    pub proposer_fallback: bool,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub regeneration: u32,
    pub candidate: u32,
    pub quality: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: u32,
    pub status: ImageStatus,
    pub request_seed: u64,
    pub attempts: Vec<LayoutAttempt>,
    pub selected: Option<Selection>,
    /// Output-relative paths of the emitted image and its control layout.
    pub image: Option<String>,
    pub layout: Option<String>,
    pub error: Option<String>,
}

impl ImageRecord {
    pub fn candidates_attempted(&self) -> u64 {
        self.attempts.iter().map(|a| a.candidates.len() as u64).sum()
    }

    pub fn candidates_accepted(&self) -> u64 {
        self.attempts.iter().flat_map(|a| &a.candidates).filter(|c| c.accepted).count() as u64
    }
}

/// Written as `report.json`. Layouts attempted counts images that ran to a
/// verdict, so `images_emitted + layouts_abandoned == layouts_attempted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub partial: bool,
    pub images_requested: u32,
    pub layouts_attempted: u32,
    pub images_emitted: u32,
    pub layouts_abandoned: u32,
    pub images_failed: u32,
    pub images_skipped: u32,
    pub candidates_attempted: u64,
    pub candidates_accepted: u64,
    pub candidates_per_layout: u32,
    pub max_regenerations: u32,
    pub selection: SelectionMode,
    pub detectors: Vec<String>,
    pub refiner: String,
    pub images: Vec<ImageRecord>,
}

impl RunReport {
    fn tally(config: &PipelineConfig, detectors: Vec<String>, refiner: String, images: Vec<ImageRecord>) -> Self {
        let count = |s: ImageStatus| images.iter().filter(|r| r.status == s).count() as u32;
        let (emitted, abandoned, failed, skipped) = (
            count(ImageStatus::Emitted),
            count(ImageStatus::Abandoned),
            count(ImageStatus::Failed),
            count(ImageStatus::Skipped),
        );
        RunReport {
            partial: failed + skipped > 0,
            images_requested: config.images,
            layouts_attempted: emitted + abandoned,
            images_emitted: emitted,
            layouts_abandoned: abandoned,
            images_failed: failed,
            images_skipped: skipped,
            candidates_attempted: images.iter().map(ImageRecord::candidates_attempted).sum(),
            candidates_accepted: images.iter().map(ImageRecord::candidates_accepted).sum(),
            candidates_per_layout: config.candidates,
            max_regenerations: config.max_regenerations,
            selection: config.selection,
            detectors,
            refiner,
            images,
        }
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    /// Kept out of the report so identical runs give identical files.
    pub wall_time: Duration,
}

/// What one image contributes to the corpus.
struct Emitted {
    layout: Layout,
    document: AnnotationDocument,
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    stats: &'a StatsTable,
    schedule: Vec<(u32, f64)>,
    formats: BTreeSet<AnnotationFormat>,
    output: &'a Path,
    labels: Vec<String>,
    abort: AtomicBool,
}

pub fn image_name(index: u32) -> String {
    format!("{index:06}")
}

fn vocabulary(layout: &Layout) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for i in &layout.instances {
        if !out.iter().any(|c| same_category(c, &i.cate)) {
            out.push(i.cate.clone());
        }
    }
    out
}

fn propose(ctx: &Ctx, b: &mut Backends, request: &LayoutRequest) -> Result<(Layout, bool)> {
    if let Some(p) = b.proposer.as_mut() {
        for _ in 0..=ctx.config.proposer_retries {
            match p.propose_layout(request) {
                Ok(l) => return Ok((l, false)),
                Err(Error::Core(CoreError::RuleViolation(_) | CoreError::InvalidLayout(_))) => continue,
                Err(e) => return Err(e),
            }
        }
        return Ok((fallback_propose(request, ctx.stats, &mut rng_from_seed(request.seed))?, true));
    }
    Ok((fallback_propose(request, ctx.stats, &mut rng_from_seed(request.seed))?, false))
}

fn move_file(from: &Path, to: &Path) -> Result<()> {
    if fs::rename(from, to).is_ok() {
        return Ok(());
    }
    fs::copy(from, to).map_err(|e| Error::io(to, e))?;
    fs::remove_file(from).map_err(|e| Error::io(from, e))
}

/// Moves the selected image (and any truth sidecar) into `images/`.
fn publish_image(ctx: &Ctx, index: u32, image: &CandidateImage) -> Result<CandidateImage> {
    let src = PathBuf::from(&image.path);
    let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("png");
    let rel = format!("images/{}.{ext}", image_name(index));
    move_file(&src, &ctx.output.join(&rel))?;
    let truth = truth_path(&src);
    if truth.exists() {
        move_file(&truth, &truth_path(&ctx.output.join(&rel)))?;
    }
    Ok(CandidateImage { path: rel, ..image.clone() })
}

fn process_image(ctx: &Ctx, index: u32, b: &mut Backends, record: &mut ImageRecord) -> Result<Option<Emitted>> {
    let cfg = ctx.config;
    let [lo, hi] = cfg.instances_per_image;
    let mut request = sample_request(&cfg.categories, lo..=hi, cfg.master_seed, u64::from(index))?;
    request.max_instances = cfg.max_instances();
    record.request_seed = request.seed;
    let work = ctx.output.join(WORK_DIR).join(image_name(index));
    fsutil::create_dir_all(&work)?;
    let out_dir = work.to_string_lossy().into_owned();

    for r in 0..=cfg.max_regenerations {
        let layout_seed = derive_seed(request.seed, &[u64::from(r)]);
        let attempt_request = LayoutRequest { seed: layout_seed, ..request.clone() };
        let (initial, proposer_fallback) = propose(ctx, b, &attempt_request)?;
        let layout = adjust_layout(&initial, ctx.stats, &mut rng_from_seed(derive_seed(layout_seed, &[ADJUST_STREAM])));
        let vocab = vocabulary(&layout);
        let instance_refs: Vec<InstanceRef> = layout
            .instances
            .iter()
            .filter_map(|i| i.ref_image.clone().map(|path| InstanceRef { id: i.id, path }))
            .collect();
        let mut attempt =
            LayoutAttempt { regeneration: r, seed: layout_seed, proposer_fallback, candidates: Vec::new() };
        let mut candidates = Vec::new();
        let mut detections: Vec<Vec<Vec<Detection>>> = Vec::new();

        for k in 0..cfg.candidates {
            let seed = derive_seed(cfg.master_seed, &[u64::from(index), u64::from(r), u64::from(k)]);
            let generated = b.generator.generate(&GenerateRequest {
                layout: layout.clone(),
                style_ref: layout.style_ref.clone(),
                instance_refs: instance_refs.clone(),
                seed,
                style_schedule: ctx.schedule.clone(),
                out_dir: out_dir.clone(),
                name: format!("r{r}_k{k}"),
            })?;
            let image = CandidateImage {
                path: generated.path,
                width: generated.width,
                height: generated.height,
                generator: b.generator.name().to_string(),
                seed,
            };
            let mut per_detector = Vec::with_capacity(b.detectors.len());
            let mut reports = Vec::with_capacity(b.detectors.len());
            for (d, det) in b.detectors.iter_mut().enumerate() {
                let mut found = det.detect(&image.path, &vocab, Some(derive_seed(seed, &[d as u64])))?;
                for f in &mut found {
                    f.detector.clone_from(&ctx.labels[d]);
                }
                reports.push(match_detections(&layout, &found, &ctx.labels[d]));
                per_detector.push(found);
            }
            // discarded candidates are never ranked, so they are not scored
            let quality = if accept_candidate(&reports) { b.scorer.score(&image.path)? } else { 0.0 };
            let scored = ScoredCandidate::new(image, reports, quality)?;
            attempt.candidates.push(CandidateRecord {
                seed,
                quality: scored.quality,
                position: scored.position,
                accepted: scored.accepted,
            });
            candidates.push(scored);
            detections.push(per_detector);
        }
        record.attempts.push(attempt);

        let best = match select_best_with(&candidates, cfg.selection) {
            Ok(i) => i,
            Err(CoreError::AllDiscarded) => continue,
            Err(e) => return Err(e.into()),
        };
        let chosen = &candidates[best];
        let refined = post_refine(&layout, &detections[best][cfg.refiner_index()]);
        let image = publish_image(ctx, index, &chosen.image)?;
        let document = assemble(&image, &refined, &AnnotationExtras::default(), &ctx.formats)?;
        record.selected = Some(Selection {
            regeneration: r,
            candidate: best as u32,
            quality: chosen.quality,
            position: chosen.position,
        });
        record.image = Some(image.path.clone());
        record.layout = Some(format!("layouts/{}.json", image_name(index)));
        return Ok(Some(Emitted { layout, document }));
    }
    Ok(None)
}

fn run_one(ctx: &Ctx, index: u32, b: &mut Backends) -> (ImageRecord, Option<Emitted>) {
    let mut record = ImageRecord {
        index,
        status: ImageStatus::Skipped,
        request_seed: 0,
        attempts: Vec::new(),
        selected: None,
        image: None,
        layout: None,
        error: None,
    };
    if ctx.abort.load(Ordering::SeqCst) {
        return (record, None);
    }
    let result = process_image(ctx, index, b, &mut record);
    let _ = fs::remove_dir_all(ctx.output.join(WORK_DIR).join(image_name(index)));
    match result {
        Ok(Some(e)) => {
            record.status = ImageStatus::Emitted;
            (record, Some(e))
        }
        Ok(None) => {
            record.status = ImageStatus::Abandoned;
            (record, None)
        }
        Err(e) => {
            ctx.abort.store(true, Ordering::SeqCst);
            record.status = ImageStatus::Failed;
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

fn clear_outputs(output: &Path) -> Result<()> {
    for dir in ["images", "layouts", "annotations", WORK_DIR] {
        let p = output.join(dir);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let report = output.join("report.json");
    if report.exists() {
        fs::remove_file(&report).map_err(|e| Error::io(&report, e))?;
    }
    Ok(())
}

fn emit_outputs(ctx: &Ctx, emitted: &[(u32, Emitted)]) -> Result<()> {
    let out = ctx.output;
    let mut registry_names = ctx.config.categories.clone();
    registry_names.extend(emitted.iter().flat_map(|(_, e)| e.document.instances.iter().map(|i| i.cate.clone())));
    let registry = CategoryRegistry::new(registry_names);

    let mut jsonl = String::new();
    for (index, e) in emitted {
        let layout = serde_json::to_string_pretty(&e.layout).expect("layouts serialize") + "\n";
        write_atomic(&out.join(format!("layouts/{}.json", image_name(*index))), layout)?;
        jsonl.push_str(&serde_json::to_string(&e.document).expect("documents serialize"));
        jsonl.push('\n');
    }
    write_atomic(&out.join("annotations/documents.jsonl"), jsonl)?;
    let docs: Vec<AnnotationDocument> = emitted.iter().map(|(_, e)| e.document.clone()).collect();
    if ctx.formats.contains(&AnnotationFormat::Coco) {
        write_atomic(&out.join("annotations/coco.json"), emit_coco(&docs, &registry)?)?;
    }
    if ctx.formats.contains(&AnnotationFormat::Yolo) {
        let yolo = out.join("annotations/yolo");
        fsutil::create_dir_all(&yolo)?;
        let classes: String = registry.names().iter().map(|n| format!("{n}\n")).collect();
        write_atomic(&yolo.join("classes.txt"), classes)?;
        for (index, e) in emitted {
            let lines: String = yolo_lines(&e.document, &registry)?.into_iter().map(|l| l + "\n").collect();
            write_atomic(&yolo.join(format!("{}.txt", image_name(*index))), lines)?;
        }
    }
    Ok(())
}

/// Connects every backend once and shuts it down again.
pub fn check_backends(config: &PipelineConfig) -> Result<Vec<String>> {
    config.validate()?;
    if let Some(s) = &config.stats {
        load_stats(s)?;
    }
    let b = Backends::connect(&config.backend_specs()?, config.timeout())?;
    let mut lines = Vec::new();
    for ep in b.proposer.iter().chain([&b.generator]).chain(&b.detectors).chain([&b.scorer]) {
        lines.push(format!("{} {} ({})", ep.role(), ep.name(), ep.spec()));
    }
    b.shutdown();
    Ok(lines)
}

/// Runs the whole pipeline and writes the corpus under `config.output`.
///
/// Startup problems (bad config, unreadable stats, failed handshakes) are
/// errors. A backend failing mid-run stops new images from starting and
/// yields a report marked partial.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    config.validate()?;
    let stats = match &config.stats {
        Some(p) => load_stats(p)?,
        None => StatsTable::new("builtin"),
    };
    let specs = config.backend_specs()?;
    let workers: Vec<Mutex<Backends>> = (0..config.parallelism)
        .map(|_| Backends::connect(&specs, config.timeout()).map(Mutex::new))
        .collect::<Result<_>>()?;
    let labels = workers[0].lock().expect("fresh mutex").detector_labels();

    fsutil::create_dir_all(&config.output)?;
    clear_outputs(&config.output)?;
    fsutil::create_dir_all(&config.output.join("images"))?;
    let ctx = Ctx {
        config,
        stats: &stats,
        schedule: config.schedule().per_step(),
        formats: config.format_set(),
        output: &config.output,
        labels: labels.clone(),
        abort: AtomicBool::new(false),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(ImageRecord, Option<Emitted>)> = pool.install(|| {
        (0..config.images)
            .into_par_iter()
            .map(|i| {
                let w = rayon::current_thread_index().unwrap_or(0) % workers.len();
                let mut b = workers[w].lock().unwrap_or_else(|p| p.into_inner());
                run_one(&ctx, i, &mut b)
            })
            .collect()
    });

    let mut records = Vec::with_capacity(results.len());
    let mut emitted = Vec::new();
    for (record, e) in results {
        if let Some(e) = e {
            emitted.push((record.index, e));
        }
        records.push(record);
    }
    emit_outputs(&ctx, &emitted)?;
    let refiner = labels[config.refiner_index()].clone();
    let report = RunReport::tally(config, labels, refiner, records);
    let text = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    write_atomic(&config.output.join("report.json"), text)?;
    let _ = fs::remove_dir_all(config.output.join(WORK_DIR));
    for w in workers {
        w.into_inner().unwrap_or_else(|p| p.into_inner()).shutdown();
    }
    Ok(RunOutcome { report, wall_time: started.elapsed() })
}
