//! `diffsw` — batch video-caption annotation over pluggable backends.
//!
//! Subcommands: curate, caption, recaption, reorg, stats, grid.
//! Exit codes: 0 success, 1 partial failures, 2 config/usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffsw_core::config::{resolve_config, ConfigOverlay, PipelineConfig};
use diffsw_core::diffsw::{recaption_clip, ClipRange, TimestampMode};
use diffsw_core::keyframe::{
    compose_grid, sample_frames, uniform_sample, write_png, DirFrameSource, GridSpec,
};
use diffsw_core::model::BundleStatus;
use diffsw_core::pipeline::PipelineError;
use diffsw_core::pipeline::{load_manifest, run_caption, run_curate};
use diffsw_core::store::{compute_stats, reorganize_training_data, write_task_files, CaptionStore};

#[derive(Parser)]
#[command(
    name = "diffsw",
    version,
    about = "Differential sliding-window video captioning pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; all mirror config-file keys and obey
/// flags > env > config file > defaults.
#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// Output directory (store, decisions, tasks, stats, grids)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Use the deterministic in-process mock backends
    #[arg(long, global = true)]
    mock: bool,
    /// Caption backend base URL (env: BACKEND_URL)
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Caption backend API key (env: BACKEND_KEY)
    #[arg(long, global = true)]
    backend_key: Option<String>,
    /// Embedding backend base URL (env: EMBED_URL)
    #[arg(long, global = true)]
    embed_url: Option<String>,
    /// Frame sampling interval in seconds
    #[arg(long, global = true)]
    sample_interval_s: Option<f64>,
    /// Keyframe similarity threshold in (0,1]
    #[arg(long, global = true)]
    keyframe_threshold: Option<f64>,
    /// Dedup similarity threshold in (0,1]
    #[arg(long, global = true)]
    dedup_threshold: Option<f64>,
    /// Duration gate in seconds (inclusive)
    #[arg(long, global = true)]
    max_duration_s: Option<f64>,
    /// Concurrent video workers
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Requests per second across all workers (env: RPS)
    #[arg(long, global = true)]
    rps: Option<f64>,
    /// Max in-flight backend requests (env: MAX_CONCURRENT)
    #[arg(long, global = true)]
    max_concurrent: Option<usize>,
    /// Seed for mock backends and retry jitter
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory of prompt template overrides
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a candidate manifest: duration gate + semantic dedup
    Curate {
        /// JSONL of candidate records
        manifest: PathBuf,
        /// Process candidates in input order instead of sorted by video id
        #[arg(long)]
        keep_order: bool,
    },
    /// Caption every video in a manifest (sample -> keyframes -> windows)
    Caption {
        /// JSONL of {video_id, duration_s, frames_dir, source_tag?}
        manifest: PathBuf,
    },
    /// Re-caption a keyframe range of a stored bundle (no vision calls)
    Recaption {
        video_id: String,
        /// First keyframe index of the clip (inclusive)
        start: usize,
        /// Last keyframe index of the clip (inclusive)
        end: usize,
        /// Shift timestamps so the clip starts at 0.000
        #[arg(long)]
        clip_relative: bool,
    },
    /// Reorganize complete bundles into the four training-task files
    Reorg,
    /// Corpus statistics: stats.json plus a text histogram
    Stats,
    /// Compose a frame grid for one video and write it as PNG
    Grid {
        video_id: String,
        /// Manifest that locates the video's frames
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        rows: u32,
        #[arg(long, default_value_t = 4)]
        cols: u32,
    },
}

impl CommonFlags {
    fn overlay(&self) -> ConfigOverlay {
        ConfigOverlay {
            sample_interval_s: self.sample_interval_s,
            keyframe_threshold: self.keyframe_threshold,
            dedup_threshold: self.dedup_threshold,
            max_duration_s: self.max_duration_s,
            worker_count: self.workers,
            rps: self.rps,
            max_concurrent: self.max_concurrent,
            backend_url: self.backend_url.clone(),
            backend_key: self.backend_key.clone(),
            embed_url: self.embed_url.clone(),
            mock: self.mock.then_some(true),
            seed: self.seed,
            template_dir: self.templates.clone(),
            out_dir: self.out_dir.clone(),
            ..Default::default()
        }
    }
}

fn build_config(flags: &CommonFlags) -> Result<PipelineConfig, String> {
    let file = match std::env::var("DIFFSW_CONFIG") {
        Ok(path) => Some(
            ConfigOverlay::from_toml_file(std::path::Path::new(&path))
                .map_err(|e| e.to_string())?,
        ),
        Err(_) => None,
    };
    let env = ConfigOverlay::from_env(&|key| std::env::var(key).ok()).map_err(|e| e.to_string())?;
    resolve_config(file, Some(env), flags.overlay()).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    // Die quietly when stdout's reader goes away (`diffsw stats | head`).
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match build_config(&cli.common) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("config error: {message}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &config) {
        Ok(code) => code,
        Err(CommandError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CommandError::Run(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

enum CommandError {
    /// Bad configuration or arguments: exit 2.
    Usage(String),
    /// The operation itself failed: exit 1.
    Run(String),
}

/// Config problems and unreadable manifests are usage errors (exit 2);
/// everything else failed at runtime (exit 1).
fn pipeline_err(e: PipelineError) -> CommandError {
    match e {
        PipelineError::Config(inner) => CommandError::Usage(inner.to_string()),
        PipelineError::Manifest { .. } | PipelineError::ManifestParse { .. } => {
            CommandError::Usage(e.to_string())
        }
        other => CommandError::Run(other.to_string()),
    }
}

fn run(command: Command, config: &PipelineConfig) -> Result<ExitCode, CommandError> {
    match command {
        Command::Curate {
            manifest,
            keep_order,
        } => {
            let report = run_curate(config, &manifest, keep_order).map_err(pipeline_err)?;
            println!(
                "curate: {} candidates, {} over duration, {} accepted, {} rejected",
                report.input_count, report.over_duration, report.accepted, report.rejected
            );
            println!("accepted manifest: {}", report.accepted_path.display());
            println!("decisions: {}", report.decisions_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Caption { manifest } => {
            let report = run_caption(config, &manifest).map_err(pipeline_err)?;
            println!(
                "caption: {} videos ({} new, {} already complete, {} failed)",
                report.total, report.completed, report.already_complete, report.failed
            );
            println!(
                "usage: {} vlm calls, {} llm calls, {} prompt tokens, {} completion tokens, {} retries",
                report.run_usage.vlm_calls,
                report.run_usage.llm_calls,
                report.run_usage.prompt_tokens,
                report.run_usage.completion_tokens,
                report.run_usage.retries
            );
            for failure in &report.failures {
                eprintln!(
                    "failed {} at {}: {}",
                    failure.video_id, failure.stage, failure.error
                );
            }
            if report.failed > 0 {
                Ok(ExitCode::from(1))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Recaption {
            video_id,
            start,
            end,
            clip_relative,
        } => {
            let store = open_store(config)?;
            let bundle = store
                .load_bundle(&video_id)
                .map_err(run_err)?
                .ok_or_else(|| CommandError::Usage(format!("unknown video '{video_id}'")))?;
            let backend = config.build_backend().map_err(usage_err)?;
            let templates = config.load_templates().map_err(usage_err)?;
            let mode = if clip_relative {
                TimestampMode::ClipRelative
            } else {
                TimestampMode::Absolute
            };
            let caption = recaption_clip(
                &bundle,
                ClipRange::new(start, end),
                &backend,
                &templates,
                mode,
                &config.caption_options(),
            )
            .map_err(run_err)?;
            println!("{caption}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Reorg => {
            let store = open_store(config)?;
            let all = store.all_latest();
            let complete: Vec<_> = all
                .iter()
                .filter(|b| b.status == BundleStatus::Complete)
                .cloned()
                .collect();
            let skipped = all.len() - complete.len();
            let backend = config.build_backend().map_err(usage_err)?;
            let templates = config.load_templates().map_err(usage_err)?;
            let records =
                reorganize_training_data(&complete, &backend, &templates).map_err(run_err)?;
            let counts = write_task_files(&records, &config.out_dir).map_err(run_err)?;
            println!(
                "reorg: {} bundles -> {} records ({} skipped incomplete)",
                complete.len(),
                records.len(),
                skipped
            );
            for (kind, count) in counts {
                println!("  {}: {count}", kind.as_str());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats => {
            let store = open_store(config)?;
            let stats = compute_stats(&store.all_latest());
            let path = config.out_dir.join("stats.json");
            let json = serde_json::to_string_pretty(&stats)
                .map_err(|e| CommandError::Run(e.to_string()))?;
            std::fs::write(&path, &json).map_err(|e| CommandError::Run(e.to_string()))?;
            println!("videos: {}", stats.total_videos);
            println!(
                "vlm calls: {}  tokens: {}",
                stats.total_vlm_calls, stats.total_tokens
            );
            println!("caption words:");
            print_buckets(
                &stats.caption_word_count_histogram,
                &diffsw_core::store::WORD_BUCKETS,
            );
            println!("duration (s):");
            print_buckets(
                &stats.duration_histogram,
                &diffsw_core::store::DURATION_BUCKETS,
            );
            println!("sources:");
            let sources: Vec<(String, u64)> = stats
                .per_source_counts
                .iter()
                .map(|(k, &v)| (k.clone(), v))
                .collect();
            print_rows(&sources);
            println!("written: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid {
            video_id,
            manifest,
            rows,
            cols,
        } => {
            if rows == 0 || cols == 0 {
                return Err(CommandError::Usage("rows and cols must be positive".into()));
            }
            let entries = load_manifest(&manifest).map_err(run_err)?;
            let entry = entries
                .iter()
                .find(|e| e.video_id == video_id)
                .ok_or_else(|| {
                    CommandError::Usage(format!("video '{video_id}' not in manifest"))
                })?;
            let source = DirFrameSource::open(&entry.frames_dir).map_err(run_err)?;
            let frames =
                sample_frames(&video_id, entry.duration_s, &source, config.sample_interval)
                    .map_err(run_err)?;
            let picks = uniform_sample(&frames, (rows * cols) as usize);
            let grid =
                compose_grid(&picks, &GridSpec::new(rows, cols, [0, 0, 0])).map_err(run_err)?;
            let path = config.out_dir.join("grids").join(format!("{video_id}.png"));
            write_png(&grid, &path).map_err(run_err)?;
            println!(
                "grid {}x{} ({}x{} px): {}",
                rows,
                cols,
                grid.width,
                grid.height,
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn open_store(config: &PipelineConfig) -> Result<CaptionStore, CommandError> {
    CaptionStore::open(&config.out_dir.join("bundles.jsonl")).map_err(run_err)
}

fn run_err(e: impl std::fmt::Display) -> CommandError {
    CommandError::Run(e.to_string())
}

fn usage_err(e: impl std::fmt::Display) -> CommandError {
    CommandError::Usage(e.to_string())
}

fn print_buckets(map: &std::collections::BTreeMap<String, u64>, order: &[&str]) {
    let rows: Vec<(String, u64)> = order
        .iter()
        .map(|bucket| (bucket.to_string(), map.get(*bucket).copied().unwrap_or(0)))
        .collect();
    print_rows(&rows);
}

fn print_rows(rows: &[(String, u64)]) {
    let max = rows
        .iter()
        .map(|(_, count)| *count)
        .max()
        .unwrap_or(0)
        .max(1);
    for (label, count) in rows {
        let bar = "#".repeat(((count * 40) / max) as usize);
        println!("  {label:>12} {count:>6} {bar}");
    }
}
