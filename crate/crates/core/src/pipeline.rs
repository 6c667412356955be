//! End-to-end orchestration: curation, the concurrent caption run with
//! resume and per-video failure isolation, and the reporting shared by the
//! CLI.
//!
//! The caption run is a work queue of videos drained by `worker_count`
//! workers; each worker runs the strictly sequential per-video pipeline
//! (sample -> extract keyframes -> differential captioning) against the
//! shared backend client, rate limiter, and store. A failing video lands in
//! `failures.jsonl` and never aborts the run.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendClient;
use crate::config::{ConfigError, PipelineConfig};
use crate::curate::{duration_gate, semantic_filter, Candidate, CurateError};
use crate::diffsw::{run_diffsw, DiffswError};
use crate::embed::ImageEmbedder;
use crate::keyframe::{extract_keyframes, sample_frames, DirFrameSource, KeyframeError};
use crate::model::{BundleStatus, SourceTag, Timestamp, UsageStats};
use crate::promptkit::TemplateSet;
use crate::store::{CaptionStore, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("failed to read manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("manifest {path} line {line}: {message}")]
    ManifestParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Curate(#[from] CurateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io failure at {path}: {message}")]
    Io { path: String, message: String },
}

/// One caption-run manifest line: where a video's pre-extracted frames
/// live. Extra fields (e.g. a candidate's short caption) are ignored, so a
/// curation manifest with a `frames_dir` column works directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifestEntry {
    pub video_id: String,
    pub duration_s: Timestamp,
    pub frames_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<SourceTag>,
}

/// One per-video failure, persisted to `failures.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub stage: String,
    pub error: String,
}

/// Outcome of a caption run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptionReport {
    pub total: usize,
    pub completed: usize,
    pub already_complete: usize,
    pub failed: usize,
    /// Backend usage across this run only (not prior resumed work).
    pub run_usage: UsageStats,
    pub failures: Vec<VideoFailure>,
}

/// Outcome of a curation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurateReport {
    pub input_count: usize,
    pub over_duration: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub accepted_path: PathBuf,
    pub decisions_path: PathBuf,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| PipelineError::ManifestParse {
            path: path.display().to_string(),
            line: line_no + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let io_err = |e: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut file = File::create(path).map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

/// Curate a candidate manifest: duration gate, then the ordered semantic
/// dedup filter. Candidates process in lexicographic video-id order unless
/// `keep_input_order` is set; the filter is order-sensitive, so the default
/// keeps reruns reproducible. Writes `accepted.jsonl` (the surviving
/// candidates) and `decisions.jsonl` (per-candidate accept/reject with the
/// max pool similarity) under the out dir.
pub fn run_curate(
    config: &PipelineConfig,
    manifest_path: &Path,
    keep_input_order: bool,
) -> Result<CurateReport, PipelineError> {
    let embedder = config.build_text_embedder()?;
    let mut candidates: Vec<Candidate> = read_jsonl(manifest_path)?;
    let input_count = candidates.len();
    if !keep_input_order {
        candidates.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    }

    let gated = duration_gate(&candidates, config.max_duration);
    let over_duration = input_count - gated.len();
    let (decisions, _pool) = semantic_filter(&gated, embedder.as_ref(), config.dedup_threshold)?;

    let accepted: Vec<&Candidate> = gated
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.accepted)
        .map(|(c, _)| c)
        .collect();
    let accepted_path = config.out_dir.join("accepted.jsonl");
    let decisions_path = config.out_dir.join("decisions.jsonl");
    write_jsonl(&accepted_path, &accepted)?;
    write_jsonl(&decisions_path, &decisions)?;

    Ok(CurateReport {
        input_count,
        over_duration,
        accepted: accepted.len(),
        rejected: decisions.len() - accepted.len(),
        accepted_path,
        decisions_path,
    })
}

/// Run one video through the sequential pipeline stages.
fn caption_one(
    entry: &VideoManifestEntry,
    config: &PipelineConfig,
    embedder: &dyn ImageEmbedder,
    backend: &BackendClient,
    templates: &TemplateSet,
    store: &CaptionStore,
) -> Result<(), VideoFailure> {
    let fail = |stage: &str, error: String| VideoFailure {
        video_id: entry.video_id.clone(),
        stage: stage.into(),
        error,
    };
    let source = DirFrameSource::open(&entry.frames_dir)
        .map_err(|e: KeyframeError| fail("frames", e.to_string()))?;
    let frames = sample_frames(
        &entry.video_id,
        entry.duration_s,
        &source,
        config.sample_interval,
    )
    .map_err(|e| fail("sample", e.to_string()))?;
    let keyframes = extract_keyframes(&frames, embedder, config.keyframe_threshold)
        .map_err(|e| fail("keyframes", e.to_string()))?;
    run_diffsw(
        &keyframes,
        backend,
        templates,
        store,
        &config.caption_options(),
        entry.source_tag,
    )
    .map_err(|e: DiffswError| fail("caption", e.to_string()))?;
    Ok(())
}

/// Caption every video in the manifest that is not already complete in the
/// store. Up to `worker_count` videos run concurrently; per-video work is
/// strictly sequential. Failures are isolated per video and appended to
/// `failures.jsonl`.
pub fn run_caption(
    config: &PipelineConfig,
    manifest_path: &Path,
) -> Result<CaptionReport, PipelineError> {
    let entries: Vec<VideoManifestEntry> = read_jsonl(manifest_path)?;
    let embedder = config.build_image_embedder()?;
    let backend = config.build_backend()?;
    let templates = config.load_templates()?;
    let store = CaptionStore::open(&config.out_dir.join("bundles.jsonl"))?;
    run_caption_with(
        config,
        &entries,
        embedder.as_ref(),
        &backend,
        &templates,
        &store,
    )
}

/// Caption with caller-supplied components; the library-level entry point
/// tests use to share scripted transports and stores across runs.
pub fn run_caption_with(
    config: &PipelineConfig,
    entries: &[VideoManifestEntry],
    embedder: &dyn ImageEmbedder,
    backend: &BackendClient,
    templates: &TemplateSet,
    store: &CaptionStore,
) -> Result<CaptionReport, PipelineError> {
    let mut report = CaptionReport {
        total: entries.len(),
        ..Default::default()
    };

    // Videos already complete never reach a worker, so reruns are free.
    let mut queue = VecDeque::new();
    for entry in entries {
        match store.load_bundle(&entry.video_id)? {
            Some(bundle) if bundle.status == BundleStatus::Complete => report.already_complete += 1,
            _ => queue.push_back(entry.clone()),
        }
    }

    let queue = Mutex::new(queue);
    let outcomes: Mutex<Vec<Result<(), VideoFailure>>> = Mutex::new(Vec::new());
    let usage_before = store_usage_total(store);
    std::thread::scope(|scope| {
        for _ in 0..config.worker_count.max(1) {
            scope.spawn(|| loop {
                let Some(entry) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                let outcome = caption_one(&entry, config, embedder, backend, templates, store);
                outcomes.lock().unwrap().push(outcome);
            });
        }
    });

    for outcome in outcomes.into_inner().unwrap() {
        match outcome {
            Ok(()) => report.completed += 1,
            Err(failure) => {
                report.failed += 1;
                report.failures.push(failure);
            }
        }
    }
    report.failures.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let usage_after = store_usage_total(store);
    report.run_usage = UsageStats {
        vlm_calls: usage_after.vlm_calls.saturating_sub(usage_before.vlm_calls),
        llm_calls: usage_after.llm_calls.saturating_sub(usage_before.llm_calls),
        prompt_tokens: usage_after
            .prompt_tokens
            .saturating_sub(usage_before.prompt_tokens),
        completion_tokens: usage_after
            .completion_tokens
            .saturating_sub(usage_before.completion_tokens),
        retries: usage_after.retries.saturating_sub(usage_before.retries),
    };

    if !report.failures.is_empty() {
        append_failures(&config.out_dir.join("failures.jsonl"), &report.failures)?;
    }
    Ok(report)
}

fn store_usage_total(store: &CaptionStore) -> UsageStats {
    let mut total = UsageStats::default();
    for bundle in store.all_latest() {
        total.merge(&bundle.usage);
    }
    total
}

fn append_failures(path: &Path, failures: &[VideoFailure]) -> Result<(), PipelineError> {
    let io_err = |e: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    for failure in failures {
        let line = serde_json::to_string(failure).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

/// Load a caption manifest (exposed for the CLI's grid command).
pub fn load_manifest(path: &Path) -> Result<Vec<VideoManifestEntry>, PipelineError> {
    read_jsonl(path)
}
