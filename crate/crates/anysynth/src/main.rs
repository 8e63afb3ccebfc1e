use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anysynth::coco::{check_coco, fit_from_coco};
use anysynth::error::{Error, Result};
use anysynth::fsutil::{read_to_string, write_atomic};
use anysynth::pipeline::{check_backends, run_pipeline, PipelineConfig};
use anysynth::protocol::replay::{parse_transcript, replay};
use anysynth::protocol::{BackendSpec, Endpoint, Role, DEFAULT_TIMEOUT};
use anysynth::sim::{serve, SimBackend};
use anysynth::stats_file::{load_stats, write_stats};
use anysynth_core::seed::derive_seed;
use anysynth_core::{adjust_layout, fallback_propose, rng_from_seed, LayoutRequest, StatsTable};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anysynth", version, about = "Layout-conditioned synthetic detection data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Category size statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Single layouts.
    #[command(subcommand)]
    Layout(LayoutCommand),
    /// End-to-end corpus generation.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Check a pipeline config and handshake with every backend.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve a built-in simulator over stdin/stdout, e.g. `sim:detector,miss_rate=0.1`.
    SimBackend { spec: String },
    /// Check a COCO instance file against the schema.
    CheckCoco { path: PathBuf },
    /// Replay a recorded protocol transcript against a backend.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        backend: String,
        /// Also require replies identical to the recorded ones.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs_f64())]
        timeout_secs: f64,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Fit width and aspect distributions from COCO annotations.
    Fit {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated category names to keep.
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
        /// Dataset name recorded in the file; defaults to the annotation path.
        #[arg(long)]
        source: Option<String>,
    },
}

#[derive(Subcommand)]
enum LayoutCommand {
    /// Propose and adjust one layout from a JSON request.
    Gen(LayoutGen),
}

#[derive(Args)]
struct LayoutGen {
    #[arg(long)]
    request: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Overrides the request's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Proposer backend spec; the built-in proposer is used when absent.
    #[arg(long)]
    proposer: Option<String>,
    /// Skip the statistical adjustment.
    #[arg(long)]
    no_adjust: bool,
}

#[derive(Subcommand)]
enum PipelineCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn stats_fit(
    annotations: PathBuf,
    out: PathBuf,
    categories: Option<Vec<String>>,
    source: Option<String>,
) -> Result<()> {
    let text = read_to_string(&annotations)?;
    let source = source.unwrap_or_else(|| annotations.display().to_string());
    let fit = fit_from_coco(&text, &source, categories.as_deref())?;
    if fit.rejected_images > 0 || fit.rejected_boxes > 0 {
        eprintln!("warning: skipped {} zero-size image(s) and {} box(es)", fit.rejected_images, fit.rejected_boxes);
    }
    write_atomic(&out, write_stats(&fit.table))?;
    eprintln!("{} categories written to {}", fit.table.entries.len(), out.display());
    Ok(())
}

fn layout_gen(args: LayoutGen) -> Result<()> {
    let text = read_to_string(&args.request)?;
    let mut request: LayoutRequest =
        serde_json::from_str(&text).map_err(|e| Error::parse(args.request.display().to_string(), e))?;
    if let Some(seed) = args.seed {
        request.seed = seed;
    }
    request.validate()?;
    let stats = match &args.stats {
        Some(p) => load_stats(p)?,
        None => StatsTable::new("builtin"),
    };
    let layout = match &args.proposer {
        Some(spec) => {
            let spec: BackendSpec = spec.parse()?;
            let mut ep = Endpoint::connect(&spec, Role::Proposer, DEFAULT_TIMEOUT)?;
            let layout = ep.propose_layout(&request)?;
            let _ = ep.shutdown();
            layout
        }
        None => fallback_propose(&request, &stats, &mut rng_from_seed(request.seed))?,
    };
    let layout = if args.no_adjust {
        layout
    } else {
        adjust_layout(&layout, &stats, &mut rng_from_seed(derive_seed(request.seed, &[u64::MAX])))
    };
    let json = serde_json::to_string_pretty(&layout).expect("layouts serialize") + "\n";
    write_atomic(&args.out, json)
}

fn pipeline_run(config: PathBuf) -> Result<ExitCode> {
    let cfg = PipelineConfig::load(&config)?;
    let outcome = run_pipeline(&cfg)?;
    let r = &outcome.report;
    eprintln!(
        "{} emitted, {} abandoned, {} failed, {} skipped of {} requested; {} candidates ({} accepted) in {:.2?}",
        r.images_emitted,
        r.layouts_abandoned,
        r.images_failed,
        r.images_skipped,
        r.images_requested,
        r.candidates_attempted,
        r.candidates_accepted,
        outcome.wall_time
    );
    if r.partial {
        if let Some(e) = r.images.iter().find_map(|i| i.error.as_deref()) {
            eprintln!("run stopped early: {e}");
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Stats(StatsCommand::Fit { annotations, out, categories, source }) => {
            stats_fit(annotations, out, categories, source)?
        }
        Command::Layout(LayoutCommand::Gen(args)) => layout_gen(args)?,
        Command::Pipeline(PipelineCommand::Run { config }) => return pipeline_run(config),
        Command::Validate { config } => {
            let cfg = PipelineConfig::load(&config)?;
            for line in check_backends(&cfg)? {
                println!("ok {line}");
            }
        }
        Command::SimBackend { spec } => {
            let BackendSpec::Sim(sim) = spec.parse::<BackendSpec>()? else {
                return Err(Error::Config(format!("{spec:?} is not a sim: spec")));
            };
            let backend = SimBackend::from_spec(&sim).map_err(Error::Config)?;
            let stdout = io::stdout();
            serve(backend, io::stdin().lock(), BufWriter::new(stdout.lock())).map_err(|e| Error::io("<stdio>", e))?;
        }
        Command::CheckCoco { path } => {
            let violations = check_coco(&read_to_string(&path)?);
            for v in &violations {
                println!("{v}");
            }
            if !violations.is_empty() {
                eprintln!("{} violation(s) in {}", violations.len(), path.display());
                return Ok(ExitCode::FAILURE);
            }
            eprintln!("{}: ok", path.display());
        }
        Command::Replay { transcript, backend, compare, timeout_secs } => {
            let text = read_to_string(&transcript)?;
            let exchanges = parse_transcript(&text).map_err(|e| Error::parse(transcript.display().to_string(), e))?;
            let spec: BackendSpec = backend.parse()?;
            let timeout = Duration::try_from_secs_f64(timeout_secs).map_err(|e| Error::Config(e.to_string()))?;
            let outcome = replay(&exchanges, &spec, timeout, compare)?;
            for v in outcome.violations.iter().chain(&outcome.mismatches) {
                println!("{v}");
            }
            eprintln!(
                "{} exchanges, {} schema violations, {} mismatches",
                outcome.exchanges,
                outcome.violations.len(),
                outcome.mismatches.len()
            );
            if !outcome.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
