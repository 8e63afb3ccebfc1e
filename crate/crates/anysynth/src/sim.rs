//! Built-in stand-ins for the model backends.
//!
//! The generator paints one flat rectangle per instance and records where it
//! put them in a `<stem>.truth.json` sidecar next to the image; the detector
//! reads that sidecar back and degrades it with misses, jitter and random
//! confidences. Everything is a pure function of the request seed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anysynth_core::layout::{same_category, validate_proposal};
use anysynth_core::seed::derive_seed;
use anysynth_core::{clamp_to_canvas, fallback_propose, rng_from_seed, BBox, CandidateImage, Detection, Layout, Rng};
use anysynth_core::{LayoutRequest, StatsTable};
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::protocol::{
    decode_request, encode_err, encode_ok, Ack, DetectReply, DetectRequest, GenerateRequest, HelloReply, ImageRef,
    ImageReply, LayoutReply, Request, Role, ScoreReply, SimSpec, WireDetection, PROTOCOL_VERSION,
};
use crate::stats_file::load_stats;

/// Where the simulated generator actually drew an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub id: u32,
    pub cate: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Truth {
    placements: Vec<Placement>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    /// Per-coordinate Gaussian placement noise, in canvas fractions.
    pub noise: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { noise: 0.0, width: 128, height: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub miss_rate: f64,
    pub jitter: f64,
    pub confidence_range: (f64, f64),
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { miss_rate: 0.0, jitter: 0.0, confidence_range: (0.5, 1.0) }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (lo, hi) = self.confidence_range;
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(format!("miss_rate {} outside [0, 1]", self.miss_rate));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(format!("jitter {} must be a finite non-negative number", self.jitter));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(format!("confidence range [{lo}, {hi}] must be an ordered pair within [0, 1]"));
        }
        Ok(())
    }
}

/// Adds independent Gaussian noise to each corner coordinate, then clamps.
///
/// An axis whose corners cross keeps its original extent.
fn perturb(b: BBox, sigma: f64, rng: &mut Rng) -> BBox {
    if sigma == 0.0 {
        return b;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let d: [f64; 4] = std::array::from_fn(|_| normal.sample(rng));
    let (mut x0, mut y0, mut x1, mut y1) = (b.x_min() + d[0], b.y_min() + d[1], b.x_max() + d[2], b.y_max() + d[3]);
    if x0 >= x1 {
        (x0, x1) = (b.x_min(), b.x_max());
    }
    if y0 >= y1 {
        (y0, y1) = (b.y_min(), b.y_max());
    }
    clamp_to_canvas(&BBox::new(x0, y0, x1, y1).expect("ordered finite corners"))
}

/// Where each instance lands in a simulated image.
pub fn simulate_placements(layout: &Layout, noise: f64, rng: &mut Rng) -> Vec<Placement> {
    layout
        .instances
        .iter()
        .map(|i| Placement { id: i.id, cate: i.cate.clone(), bbox: perturb(i.bbox, noise, rng) })
        .collect()
}

const BACKGROUND: Rgb<u8> = Rgb([127, 127, 127]);

fn instance_color(id: u32) -> Rgb<u8> {
    let h = derive_seed(u64::from(id), &[0xC0]).to_le_bytes();
    let c = Rgb([h[0], h[1], h[2]]);
    if c == BACKGROUND {
        Rgb([h[0] ^ 0x80, h[1], h[2]])
    } else {
        c
    }
}

/// Flat background with one filled rectangle per placement, in order.
pub fn render(placements: &[Placement], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    for p in placements {
        let span = |lo: f64, hi: f64, n: u32| {
            let a = ((lo * n as f64).floor() as u32).min(n);
            let b = ((hi * n as f64).ceil() as u32).clamp(a, n);
            a..b
        };
        let color = instance_color(p.id);
        for y in span(p.bbox.y_min(), p.bbox.y_max(), height) {
            for x in span(p.bbox.x_min(), p.bbox.x_max(), width) {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

pub fn encode_png(img: &RgbImage) -> std::result::Result<Vec<u8>, image::ImageError> {
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf).write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)?;
    Ok(buf)
}

/// Sidecar holding the true placements of a simulated image.
pub fn truth_path(image: &Path) -> PathBuf {
    image.with_extension("truth.json")
}

pub fn read_truth(image: &Path) -> Result<Vec<Placement>> {
    let path = truth_path(image);
    let text = fsutil::read_to_string(&path)?;
    let truth: Truth = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    Ok(truth.placements)
}

/// Renders the request's layout to `<out_dir>/<name>.png` plus its truth sidecar.
pub fn simulate_generate(
    request: &GenerateRequest,
    config: &GeneratorConfig,
    generator: &str,
    rng: &mut Rng,
) -> Result<(CandidateImage, Vec<Placement>)> {
    let placements = simulate_placements(&request.layout, config.noise, rng);
    let path = Path::new(&request.out_dir).join(format!("{}.png", request.name));
    let png = encode_png(&render(&placements, config.width, config.height))
        .map_err(|e| Error::Image { path: path.clone(), detail: e.to_string() })?;
    fsutil::write_atomic(&path, png)?;
    let truth = serde_json::to_string(&Truth { placements: placements.clone() }).expect("placements serialize");
    fsutil::write_atomic(&truth_path(&path), truth)?;
    let image = CandidateImage {
        path: path.to_string_lossy().into_owned(),
        width: config.width,
        height: config.height,
        generator: generator.to_string(),
        seed: request.seed,
    };
    Ok((image, placements))
}

/// Degrades true placements into detector output.
///
/// Per placement, in order: one draw decides a miss, four normal draws
/// jitter the survivor (skipped when jitter is zero), one draw sets the
/// confidence.
pub fn simulate_detect(
    placements: &[Placement],
    config: &DetectorConfig,
    detector: &str,
    rng: &mut Rng,
) -> Vec<Detection> {
    let (lo, hi) = config.confidence_range;
    let mut out = Vec::new();
    for p in placements {
        if rng.random::<f64>() < config.miss_rate {
            continue;
        }
        let bbox = perturb(p.bbox, config.jitter, rng);
        let confidence = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        out.push(Detection { cate: p.cate.clone(), bbox, confidence, detector: detector.to_string() });
    }
    out
}

/// FNV-1a over the file bytes, so the score depends only on image content.
fn content_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn simulate_score(bytes: &[u8], range: [f64; 2]) -> f64 {
    let unit = (content_hash(bytes) >> 11) as f64 / (1u64 << 53) as f64;
    range[0] + unit * (range[1] - range[0])
}

#[derive(Debug, Clone)]
enum Behavior {
    Proposer(StatsTable),
    Generator(GeneratorConfig),
    Detector(DetectorConfig),
    Scorer([f64; 2]),
}

/// A simulator answering protocol requests for one role.
#[derive(Debug, Clone)]
pub struct SimBackend {
    name: String,
    behavior: Behavior,
}

struct Params(BTreeMap<String, String>);

impl Params {
    fn take_f64(&mut self, key: &str, default: f64) -> std::result::Result<f64, String> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().ok().filter(|x: &f64| x.is_finite()).ok_or(format!("{key}={v} is not a number")),
        }
    }

    fn take_u32(&mut self, key: &str, default: u32) -> std::result::Result<u32, String> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().ok().filter(|&x| x > 0).ok_or(format!("{key}={v} is not a positive integer")),
        }
    }
}

impl SimBackend {
    pub fn from_spec(spec: &SimSpec) -> std::result::Result<Self, String> {
        let mut p = Params(spec.params.clone());
        let name = p.0.remove("name").unwrap_or_else(|| format!("sim-{}", spec.role));
        let behavior = match spec.role {
            Role::Proposer => match p.0.remove("stats") {
                Some(path) => Behavior::Proposer(load_stats(Path::new(&path)).map_err(|e| e.to_string())?),
                None => Behavior::Proposer(StatsTable::new("builtin")),
            },
            Role::Generator => {
                let noise = p.take_f64("noise", 0.0)?;
                if noise < 0.0 {
                    return Err(format!("noise {noise} must be non-negative"));
                }
                let d = GeneratorConfig::default();
                let (width, height) = (p.take_u32("width", d.width)?, p.take_u32("height", d.height)?);
                Behavior::Generator(GeneratorConfig { noise, width, height })
            }
            Role::Detector => {
                let d = DetectorConfig::default();
                let cfg = DetectorConfig {
                    miss_rate: p.take_f64("miss_rate", d.miss_rate)?,
                    jitter: p.take_f64("jitter", d.jitter)?,
                    confidence_range: (
                        p.take_f64("conf_min", d.confidence_range.0)?,
                        p.take_f64("conf_max", d.confidence_range.1)?,
                    ),
                };
                cfg.validate()?;
                Behavior::Detector(cfg)
            }
            Role::Scorer => {
                let range = [p.take_f64("min", 0.0)?, p.take_f64("max", 10.0)?];
                if range[0] >= range[1] {
                    return Err(format!("score range [{}, {}] is empty", range[0], range[1]));
                }
                Behavior::Scorer(range)
            }
        };
        if let Some(k) = p.0.keys().next() {
            return Err(format!("unknown option {k:?} for the simulated {}", spec.role));
        }
        Ok(Self { name, behavior })
    }

    pub fn role(&self) -> Role {
        match self.behavior {
            Behavior::Proposer(_) => Role::Proposer,
            Behavior::Generator(_) => Role::Generator,
            Behavior::Detector(_) => Role::Detector,
            Behavior::Scorer(_) => Role::Scorer,
        }
    }

    pub fn hello(&self) -> HelloReply {
        HelloReply {
            role: self.role(),
            version: PROTOCOL_VERSION.into(),
            name: self.name.clone(),
            score_range: match self.behavior {
                Behavior::Scorer(r) => Some(r),
                _ => None,
            },
        }
    }

    fn propose(&self, stats: &StatsTable, request: &LayoutRequest) -> Result<Layout> {
        let layout = fallback_propose(request, stats, &mut rng_from_seed(request.seed))?;
        Ok(validate_proposal(request, layout)?)
    }

    fn detect(&self, cfg: &DetectorConfig, req: &DetectRequest) -> Result<DetectReply> {
        let truth: Vec<Placement> = read_truth(Path::new(&req.image))?
            .into_iter()
            .filter(|p| req.vocabulary.iter().any(|v| same_category(v, &p.cate)))
            .collect();
        let mut rng = rng_from_seed(req.seed.unwrap_or(0));
        let detections = simulate_detect(&truth, cfg, &self.name, &mut rng)
            .into_iter()
            .map(|d| WireDetection { cate: d.cate, bbox: d.bbox, confidence: d.confidence })
            .collect();
        Ok(DetectReply { detections })
    }

    fn respond(&self, id: u64, request: &Request) -> Result<String> {
        let role = self.role();
        if !matches!(request, Request::Hello | Request::Shutdown) && request.op() != role.work_op() {
            return Err(Error::Config(format!("a {role} does not answer {}", request.op().name())));
        }
        Ok(match (&self.behavior, request) {
            (_, Request::Hello) => encode_ok(id, &self.hello()),
            (_, Request::Shutdown) => encode_ok(id, &Ack {}),
            (Behavior::Proposer(stats), Request::ProposeLayout { request }) => {
                encode_ok(id, &LayoutReply { layout: self.propose(stats, request)? })
            }
            (Behavior::Generator(cfg), Request::Generate(g)) => {
                let (img, _) = simulate_generate(g, cfg, &self.name, &mut rng_from_seed(g.seed))?;
                encode_ok(id, &ImageReply { image: ImageRef { path: img.path, width: img.width, height: img.height } })
            }
            (Behavior::Detector(cfg), Request::Detect(d)) => encode_ok(id, &self.detect(cfg, d)?),
            (Behavior::Scorer(range), Request::Score { image }) => {
                let bytes = std::fs::read(image).map_err(|e| Error::io(image, e))?;
                encode_ok(id, &ScoreReply { score: simulate_score(&bytes, *range) })
            }
            _ => unreachable!("role checked above"),
        })
    }

    /// Answers one request line with one reply line.
    pub fn handle_line(&mut self, line: &str) -> String {
        match decode_request(line) {
            Ok((id, request)) => self.respond(id, &request).unwrap_or_else(|e| encode_err(Some(id), &e.to_string())),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| v.get("id")?.as_u64());
                encode_err(id, &e)
            }
        }
    }
}

/// Serves requests line by line until shutdown or end of input.
pub fn serve(mut backend: SimBackend, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = backend.handle_line(&line);
        writeln!(output, "{reply}")?;
        output.flush()?;
        if matches!(decode_request(&line), Ok((_, Request::Shutdown))) {
            break;
        }
    }
    Ok(())
}
