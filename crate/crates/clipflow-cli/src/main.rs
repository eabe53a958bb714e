//! `clipflow`: one binary over the core library. Machine-readable output
//! goes to stdout (and to files when paths are given); human summaries go
//! to stderr. Exit codes: 0 success or all properties passing, 1 any
//! property, validation, or runtime failure, 2 usage errors.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use clipflow_core::{
    parse_probability_rows, run_pipeline, run_verification, simulate,
    timeline_from_probability_rows, train_toy, write_clip_dump, write_curve_csv, write_manifest,
    write_report, write_trace_jsonl, write_verify_report, AblationMode, EmotionLabel,
    GenerationConfig, Manifest, SyntheticScorers, SyntheticTask, Thresholds, TrainConfig,
    DEFAULT_SUBSEGMENT_FRAMES,
};

use config::{resolve_seed, FileConfig};

const DEFAULT_VERIFY_SEED: u64 = 2024;

#[derive(Parser)]
#[command(
    name = "clipflow",
    version,
    about = "Memory-guided clip streaming: verification, toy training, simulation, curation"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numeric property suite and emit a JSON report.
    Verify(VerifyArgs),
    /// Train the toy denoiser on the synthetic audio task.
    TrainToy(TrainToyArgs),
    /// Stream clips autoregressively; write a trace and a clip dump.
    Simulate(SimulateArgs),
    /// Filter a clip manifest through the curation gates.
    Pipeline(PipelineArgs),
    /// Build an emotion timeline from per-frame probability rows.
    Emotion(EmotionArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Only run properties whose name contains this substring.
    #[arg(long)]
    filter: Option<String>,
    /// Seed for the randomized property cases.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the JSON report to this path.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Number of optimization steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Loss-curve CSV path.
    #[arg(long, value_name = "FILE", default_value = "train_curve.csv")]
    curve: PathBuf,
    /// Final-report JSON path.
    #[arg(long, value_name = "FILE", default_value = "train_report.json")]
    report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateMemory {
    /// Hide all history from the denoiser.
    Off,
    /// Replace the memory with the previous clip's raw frames.
    Last1clip,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of clips to stream.
    #[arg(long)]
    clips: Option<usize>,
    /// Memory decay per frame.
    #[arg(long)]
    gamma: Option<f64>,
    /// Guidance strength.
    #[arg(long = "cfg-scale")]
    cfg_scale: Option<f64>,
    /// Denoising steps per clip.
    #[arg(long)]
    steps: Option<usize>,
    /// Stream seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Ablate the memory path.
    #[arg(long = "ablate-memory", value_enum)]
    ablate_memory: Option<AblateMemory>,
    /// Constant emotion label (by name); omitted means a cycling schedule.
    #[arg(long)]
    emotion: Option<String>,
    /// Trace JSONL path.
    #[arg(long, value_name = "FILE", default_value = "simulate_trace.jsonl")]
    trace: PathBuf,
    /// Binary clip-dump path.
    #[arg(long, value_name = "FILE", default_value = "simulate_clips.bin")]
    dump: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input manifest (one JSON record per line).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Kept-records manifest path.
    #[arg(long, value_name = "FILE", default_value = "pipeline_kept.jsonl")]
    out: PathBuf,
    /// Report JSON path.
    #[arg(long, value_name = "FILE", default_value = "pipeline_report.json")]
    report: PathBuf,
    /// Quality gate: keep strictly above this score.
    #[arg(long = "iqa-min")]
    iqa_min: Option<f64>,
    /// Sync gate: keep strictly above this confidence.
    #[arg(long = "sync-c-min")]
    sync_c_min: Option<f64>,
    /// Longest allowed clip in seconds; longer ones are split evenly.
    #[arg(long = "max-clip-s")]
    max_clip_s: Option<f64>,
    /// Widening factor applied to kept face boxes.
    #[arg(long = "bbox-scale")]
    bbox_scale: Option<f64>,
    /// Seed for the synthetic scorers that fill missing fields.
    #[arg(long = "scorer-seed")]
    scorer_seed: Option<u64>,
}

#[derive(Args)]
struct EmotionArgs {
    /// Probability-rows file: eight numbers per line.
    #[arg(long, value_name = "FILE")]
    probs: PathBuf,
    /// Frames per voted subsegment.
    #[arg(long = "subseg")]
    subsegment_frames: Option<usize>,
    /// Frame rate recorded in the timeline.
    #[arg(long = "frame-rate")]
    frame_rate: Option<f64>,
    /// Also write the timeline JSON to this path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message:#}");
    ExitCode::from(2)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file_cfg = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(c) => c,
            Err(e) => return Ok(usage_error(format!("{e:#}"))),
        },
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Verify(args) => cmd_verify(args, &file_cfg),
        Command::TrainToy(args) => cmd_train_toy(args, &file_cfg),
        Command::Simulate(args) => cmd_simulate(args, &file_cfg),
        Command::Pipeline(args) => cmd_pipeline(args, &file_cfg),
        Command::Emotion(args) => cmd_emotion(args, &file_cfg),
    }
}

fn cmd_verify(args: VerifyArgs, file_cfg: &FileConfig) -> Result<ExitCode> {
    let section = file_cfg.verify.clone().unwrap_or_default();
    let filter = args.filter.or(section.filter);
    let seed = match resolve_seed(args.seed, section.seed, DEFAULT_VERIFY_SEED) {
        Ok(s) => s,
        Err(e) => return Ok(usage_error(e)),
    };
    let report = run_verification(filter.as_deref(), seed);
    eprint!("{}", report.summary());
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(path) = &args.report {
        write_verify_report(path, &report)?;
    }
    Ok(if report.all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct TrainToySummary {
    seed: u64,
    steps: usize,
    lr: f64,
    kept_steps: usize,
    skipped_outliers: usize,
    skipped_anomalies: usize,
    initial_ema: f64,
    final_ema: f64,
    improvement_ratio: f64,
}

fn cmd_train_toy(args: TrainToyArgs, file_cfg: &FileConfig) -> Result<ExitCode> {
    let mut cfg: TrainConfig = file_cfg.train.clone().unwrap_or_default();
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    let file_seed = file_cfg.train_names_seed().then_some(cfg.seed);
    cfg.seed = match resolve_seed(args.seed, file_seed, cfg.seed) {
        Ok(s) => s,
        Err(e) => return Ok(usage_error(e)),
    };

    let task = SyntheticTask::for_config(&cfg).context("building the synthetic task")?;
    let run = train_toy(&cfg, &task).context("toy training failed")?;
    write_curve_csv(&args.curve, &run.curve)
        .with_context(|| format!("writing curve to {}", args.curve.display()))?;

    let kept_steps = run.curve.iter().filter(|r| r.kept).count();
    let summary = TrainToySummary {
        seed: cfg.seed,
        steps: cfg.steps,
        lr: cfg.lr,
        kept_steps,
        skipped_outliers: run.state.skipped_batches,
        skipped_anomalies: run.state.skipped_anomalies,
        initial_ema: run.state.initial_ema,
        final_ema: run.state.ema_loss,
        improvement_ratio: run.state.ema_loss / run.state.initial_ema,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&args.report, format!("{json}\n"))
        .with_context(|| format!("writing report to {}", args.report.display()))?;
    println!("{json}");
    eprintln!(
        "trained {} steps (kept {}, outliers {}, anomalies {}): ema {:.3} -> {:.3} (ratio {:.4})",
        cfg.steps,
        kept_steps,
        run.state.skipped_batches,
        run.state.skipped_anomalies,
        run.state.initial_ema,
        run.state.ema_loss,
        summary.improvement_ratio
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    clips: usize,
    clip_len: usize,
    latent_dim: usize,
    ablation: AblationMode,
    memory_norm_min: f64,
    memory_norm_max: f64,
    final_memory_norm_bound: f64,
}

fn cmd_simulate(args: SimulateArgs, file_cfg: &FileConfig) -> Result<ExitCode> {
    let mut cfg: GenerationConfig = file_cfg.simulate.clone().unwrap_or_default();
    if let Some(clips) = args.clips {
        cfg.clips = clips;
    }
    if let Some(gamma) = args.gamma {
        cfg.gamma = gamma;
    }
    if let Some(scale) = args.cfg_scale {
        cfg.cfg_scale = scale;
    }
    if let Some(steps) = args.steps {
        cfg.denoise_steps = steps;
    }
    if let Some(mode) = args.ablate_memory {
        cfg.ablation = match mode {
            AblateMemory::Off => AblationMode::MemoryOff,
            AblateMemory::Last1clip => AblationMode::LastClipWindow,
        };
    }
    let file_seed = file_cfg.simulate_names_seed().then_some(cfg.seed);
    cfg.seed = match resolve_seed(args.seed, file_seed, cfg.seed) {
        Ok(s) => s,
        Err(e) => return Ok(usage_error(e)),
    };
    let emotion = match &args.emotion {
        None => None,
        Some(name) => match EmotionLabel::parse(name) {
            Ok(label) => Some(label),
            Err(e) => return Ok(usage_error(e)),
        },
    };

    let out = simulate(&cfg, emotion).context("simulation failed")?;
    write_trace_jsonl(&args.trace, &out.traces)
        .with_context(|| format!("writing trace to {}", args.trace.display()))?;
    write_clip_dump(&args.dump, &out.clips)
        .with_context(|| format!("writing clips to {}", args.dump.display()))?;

    let norms: Vec<f64> = out.traces.iter().map(|t| t.memory_frobenius_norm).collect();
    let summary = SimulateSummary {
        seed: cfg.seed,
        clips: cfg.clips,
        clip_len: cfg.clip_len,
        latent_dim: cfg.dims.d,
        ablation: cfg.ablation,
        memory_norm_min: norms.iter().copied().fold(f64::INFINITY, f64::min),
        memory_norm_max: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        final_memory_norm_bound: out.state.memory_norm_bound(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!(
        "streamed {} clips of {} frames; memory norm in [{:.4}, {:.4}]",
        cfg.clips, cfg.clip_len, summary.memory_norm_min, summary.memory_norm_max
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_pipeline(args: PipelineArgs, file_cfg: &FileConfig) -> Result<ExitCode> {
    let mut thresholds: Thresholds = file_cfg.pipeline.clone().unwrap_or_default();
    if let Some(v) = args.iqa_min {
        thresholds.iqa_min = v;
    }
    if let Some(v) = args.sync_c_min {
        thresholds.sync_c_min = v;
    }
    if let Some(v) = args.max_clip_s {
        thresholds.max_clip_s = v;
    }
    if let Some(v) = args.bbox_scale {
        thresholds.bbox_scale = v;
    }
    let scorer_seed = match resolve_seed(args.scorer_seed, None, 0) {
        Ok(s) => s,
        Err(e) => return Ok(usage_error(e)),
    };

    let manifest = Manifest::read(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let scorers = SyntheticScorers::new(scorer_seed);
    let outcome = run_pipeline(&manifest, &scorers, &thresholds).context("pipeline failed")?;
    write_manifest(&args.out, &outcome.kept)
        .with_context(|| format!("writing kept records to {}", args.out.display()))?;
    write_report(&args.report, &outcome.report)
        .with_context(|| format!("writing report to {}", args.report.display()))?;

    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    let rejected: usize = outcome.report.rejected.values().sum();
    eprintln!(
        "kept {} of {} post-trim records ({} rejected)",
        outcome.report.kept, outcome.report.post_trim_count, rejected
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_emotion(args: EmotionArgs, file_cfg: &FileConfig) -> Result<ExitCode> {
    let section = file_cfg.emotion.clone().unwrap_or_default();
    let frame_rate = args.frame_rate.or(section.frame_rate).unwrap_or(30.0);
    let subsegment_frames = args
        .subsegment_frames
        .or(section.subsegment_frames)
        .unwrap_or(DEFAULT_SUBSEGMENT_FRAMES);

    let text = std::fs::read_to_string(&args.probs)
        .with_context(|| format!("reading probability rows {}", args.probs.display()))?;
    let rows = parse_probability_rows(&text).context("parsing probability rows")?;
    let timeline = timeline_from_probability_rows(frame_rate, &rows, subsegment_frames)
        .context("building the timeline")?;

    let json = serde_json::to_string_pretty(&timeline)?;
    if let Some(path) = &args.out {
        std::fs::write(path, format!("{json}\n"))
            .with_context(|| format!("writing timeline to {}", path.display()))?;
    }
    println!("{json}");
    eprintln!(
        "{} frames -> {} subsegments at {} frames each",
        timeline.frame_count(),
        timeline.subsegments.len(),
        subsegment_frames
    );
    Ok(ExitCode::SUCCESS)
}
