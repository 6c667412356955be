//! Persistent caption store, corpus statistics, and reorganization of
//! bundles into the four training-task record formats.
//!
//! The store is an append-only JSONL log with latest-wins semantics per
//! video id: resuming a run replays the log once at open and every put
//! appends a full bundle snapshot. Corrupt lines are skipped with a warning
//! so one bad record never strands the corpus.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendClient, BackendError, LlmRequest};
use crate::model::{validate_bundle, BundleStatus, CaptionBundle, Timestamp, SCHEMA_VERSION};
use crate::promptkit::{render_condense_prompt, PromptError, TemplateSet};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io failure at {path}: {message}")]
    Io { path: String, message: String },
    #[error("bundle for video {video_id} violates invariants: {violations:?}")]
    InvalidBundle {
        video_id: String,
        violations: Vec<String>,
    },
    #[error("bundle for video {0} is not complete")]
    IncompleteBundle(String),
    #[error("recaption prompt generation failed for video {video_id}: {source}")]
    RecaptionBackend {
        video_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

struct StoreInner {
    file: File,
    latest: BTreeMap<String, CaptionBundle>,
}

/// Append-only caption store backed by one `bundles.jsonl` file.
/// Single writer (appends serialize through an internal lock); reads come
/// from the in-memory latest-wins index built at open.
pub struct CaptionStore {
    path: PathBuf,
    inner: Mutex<StoreInner>,
    open_warnings: Vec<String>,
}

impl CaptionStore {
    /// Open or create the store, replaying any existing log. Corrupt or
    /// future-schema lines are skipped; each produces a warning naming the
    /// line number.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io_err = |e: std::io::Error| StoreError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }

        let mut latest = BTreeMap::new();
        let mut open_warnings = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_err)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CaptionBundle>(&line) {
                    Ok(bundle) if bundle.schema_version > SCHEMA_VERSION => {
                        let warning = format!(
                            "line {}: schema_version {} is newer than supported {}; skipped",
                            line_no + 1,
                            bundle.schema_version,
                            SCHEMA_VERSION
                        );
                        log::warn!("{}: {warning}", path.display());
                        open_warnings.push(warning);
                    }
                    Ok(bundle) => {
                        latest.insert(bundle.video_id.clone(), bundle);
                    }
                    Err(e) => {
                        let warning = format!("line {}: corrupt record skipped ({e})", line_no + 1);
                        log::warn!("{}: {warning}", path.display());
                        open_warnings.push(warning);
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(CaptionStore {
            path: path.to_path_buf(),
            inner: Mutex::new(StoreInner { file, latest }),
            open_warnings,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Warnings from replaying the log at open (corrupt lines, future
    /// schema versions), in file order.
    pub fn open_warnings(&self) -> &[String] {
        &self.open_warnings
    }

    /// Durably append a bundle snapshot. The bundle must validate clean.
    pub fn put_bundle(&self, bundle: &CaptionBundle) -> Result<(), StoreError> {
        let violations = validate_bundle(bundle);
        if !violations.is_empty() {
            return Err(StoreError::InvalidBundle {
                video_id: bundle.video_id.clone(),
                violations,
            });
        }
        let io_err = |e: std::io::Error| StoreError::Io {
            path: self.path.display().to_string(),
            message: e.to_string(),
        };
        let mut line = serde_json::to_string(bundle).map_err(|e| StoreError::Io {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        line.push('\n');
        let mut inner = self.inner.lock().unwrap();
        inner.file.write_all(line.as_bytes()).map_err(io_err)?;
        inner.file.flush().map_err(io_err)?;
        inner.latest.insert(bundle.video_id.clone(), bundle.clone());
        Ok(())
    }

    /// Latest record for a video, if any.
    pub fn load_bundle(&self, video_id: &str) -> Result<Option<CaptionBundle>, StoreError> {
        Ok(self.inner.lock().unwrap().latest.get(video_id).cloned())
    }

    /// Video ids whose latest record has the given status, sorted.
    pub fn list_status(&self, status: BundleStatus) -> Vec<String> {
        self.inner
            .lock()
            .unwrap()
            .latest
            .values()
            .filter(|b| b.status == status)
            .map(|b| b.video_id.clone())
            .collect()
    }

    /// Latest record per video, sorted by video id.
    pub fn all_latest(&self) -> Vec<CaptionBundle> {
        self.inner
            .lock()
            .unwrap()
            .latest
            .values()
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Fast,
    Sliding,
    Summarize,
    Recaption,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Fast => "fast",
            TaskKind::Sliding => "sliding",
            TaskKind::Summarize => "summarize",
            TaskKind::Recaption => "recaption",
        }
    }
}

/// Timestamped caption entry inside a summarize-task input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedCaption {
    pub timestamp_s: Timestamp,
    pub text: String,
}

/// Task-specific input payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskInput {
    Fast {
        grid_image_ref: String,
    },
    Sliding {
        prev_frame_ref: String,
        cur_frame_ref: String,
        prev_diff_caption: String,
    },
    Summarize {
        diff_captions_with_timestamps: Vec<TimedCaption>,
    },
    Recaption {
        generated_prompt: String,
    },
}

/// One training example: task-shaped input plus its target text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: TaskKind,
    pub video_id: String,
    pub input: TaskInput,
    pub target: String,
}

/// Reference string for a keyframe inside training records.
pub fn frame_ref(video_id: &str, timestamp: Timestamp) -> String {
    format!("{video_id}@{}", timestamp.render_seconds())
}

/// Reference string for a video's keyframe montage.
pub fn grid_ref(video_id: &str) -> String {
    format!("{video_id}#grid")
}

/// Reorganize complete bundles into training records for the four task
/// formats. Per bundle with `n` keyframes this emits exactly `n + 2`
/// records: one fast (montage -> summary), `n - 1` sliding
/// (two adjacent keyframes + previous caption -> next differential
/// caption), one summarize (all timestamped captions -> summary), and one
/// recaption, whose short generation prompt comes from a single LLM call
/// condensing the dense caption and whose target is the dense caption —
/// training the prompt-to-caption direction in reverse.
pub fn reorganize_training_data(
    bundles: &[CaptionBundle],
    backend: &BackendClient,
    templates: &TemplateSet,
) -> Result<Vec<TaskRecord>, StoreError> {
    let mut records = Vec::new();
    for bundle in bundles {
        let summary = match (&bundle.status, &bundle.summary) {
            (BundleStatus::Complete, Some(summary)) => summary.clone(),
            _ => return Err(StoreError::IncompleteBundle(bundle.video_id.clone())),
        };
        let video_id = bundle.video_id.clone();

        records.push(TaskRecord {
            task: TaskKind::Fast,
            video_id: video_id.clone(),
            input: TaskInput::Fast {
                grid_image_ref: grid_ref(&video_id),
            },
            target: summary.clone(),
        });

        for window in bundle.differential_captions.windows(2) {
            records.push(TaskRecord {
                task: TaskKind::Sliding,
                video_id: video_id.clone(),
                input: TaskInput::Sliding {
                    prev_frame_ref: frame_ref(&video_id, window[0].timestamp_s),
                    cur_frame_ref: frame_ref(&video_id, window[1].timestamp_s),
                    prev_diff_caption: window[0].text.clone(),
                },
                target: window[1].text.clone(),
            });
        }

        records.push(TaskRecord {
            task: TaskKind::Summarize,
            video_id: video_id.clone(),
            input: TaskInput::Summarize {
                diff_captions_with_timestamps: bundle
                    .differential_captions
                    .iter()
                    .map(|c| TimedCaption {
                        timestamp_s: c.timestamp_s,
                        text: c.text.clone(),
                    })
                    .collect(),
            },
            target: summary.clone(),
        });

        let prompt = render_condense_prompt(&summary, &templates.condense)?;
        let completion = backend
            .llm_complete(&LlmRequest {
                prompt,
                max_tokens: 256,
                temperature: 0.2,
            })
            .map_err(|source| StoreError::RecaptionBackend {
                video_id: video_id.clone(),
                source,
            })?;
        records.push(TaskRecord {
            task: TaskKind::Recaption,
            video_id,
            input: TaskInput::Recaption {
                generated_prompt: completion.text,
            },
            target: summary,
        });
    }
    Ok(records)
}

/// Corpus-level statistics over bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub caption_word_count_histogram: BTreeMap<String, u64>,
    pub duration_histogram: BTreeMap<String, u64>,
    pub per_source_counts: BTreeMap<String, u64>,
    pub total_videos: u64,
    pub total_vlm_calls: u64,
    pub total_tokens: u64,
}

pub const WORD_BUCKETS: [&str; 5] = [
    "[0,100)",
    "[100,200)",
    "[200,300)",
    "[300,400)",
    "[400,inf)",
];
pub const DURATION_BUCKETS: [&str; 5] = ["[0,15)", "[15,30)", "[30,60)", "[60,120)", "[120,inf)"];

pub fn word_bucket(words: u64) -> &'static str {
    match words {
        0..=99 => WORD_BUCKETS[0],
        100..=199 => WORD_BUCKETS[1],
        200..=299 => WORD_BUCKETS[2],
        300..=399 => WORD_BUCKETS[3],
        _ => WORD_BUCKETS[4],
    }
}

pub fn duration_bucket(duration: Timestamp) -> &'static str {
    match duration.as_millis() {
        0..=14_999 => DURATION_BUCKETS[0],
        15_000..=29_999 => DURATION_BUCKETS[1],
        30_000..=59_999 => DURATION_BUCKETS[2],
        60_000..=119_999 => DURATION_BUCKETS[3],
        _ => DURATION_BUCKETS[4],
    }
}

/// Count a summary's words: Unicode-whitespace splitting, no stemming.
pub fn summary_word_count(bundle: &CaptionBundle) -> u64 {
    bundle
        .summary
        .as_deref()
        .map(|s| s.split_whitespace().count() as u64)
        .unwrap_or(0)
}

/// One deterministic pass over the bundles. Video duration is the last
/// keyframe timestamp, which sampling pins to the true clip end.
pub fn compute_stats(bundles: &[CaptionBundle]) -> CorpusStats {
    let mut word_hist: BTreeMap<String, u64> =
        WORD_BUCKETS.iter().map(|b| (b.to_string(), 0)).collect();
    let mut duration_hist: BTreeMap<String, u64> = DURATION_BUCKETS
        .iter()
        .map(|b| (b.to_string(), 0))
        .collect();
    let mut per_source: BTreeMap<String, u64> = BTreeMap::new();
    let mut total_vlm_calls = 0u64;
    let mut total_tokens = 0u64;

    for bundle in bundles {
        *word_hist
            .get_mut(word_bucket(summary_word_count(bundle)))
            .unwrap() += 1;
        let duration = bundle
            .keyframe_timestamps
            .last()
            .copied()
            .unwrap_or(Timestamp::ZERO);
        *duration_hist.get_mut(duration_bucket(duration)).unwrap() += 1;
        let source = bundle.source_tag.map_or("other", |t| t.as_str());
        *per_source.entry(source.to_string()).or_insert(0) += 1;
        total_vlm_calls += bundle.usage.vlm_calls;
        total_tokens += bundle.usage.prompt_tokens + bundle.usage.completion_tokens;
    }

    CorpusStats {
        caption_word_count_histogram: word_hist,
        duration_histogram: duration_hist,
        per_source_counts: per_source,
        total_videos: bundles.len() as u64,
        total_vlm_calls,
        total_tokens,
    }
}

/// Write task records into `<out_dir>/tasks/{fast,sliding,summarize,recaption}.jsonl`.
pub fn write_task_files(
    records: &[TaskRecord],
    out_dir: &Path,
) -> Result<BTreeMap<TaskKind, usize>, StoreError> {
    let tasks_dir = out_dir.join("tasks");
    let io_err = |e: std::io::Error| StoreError::Io {
        path: tasks_dir.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(&tasks_dir).map_err(io_err)?;
    let mut writers: BTreeMap<TaskKind, File> = BTreeMap::new();
    let mut counts: BTreeMap<TaskKind, usize> = BTreeMap::new();
    for kind in [
        TaskKind::Fast,
        TaskKind::Sliding,
        TaskKind::Summarize,
        TaskKind::Recaption,
    ] {
        let path = tasks_dir.join(format!("{}.jsonl", kind.as_str()));
        writers.insert(
            kind,
            OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(path)
                .map_err(io_err)?,
        );
        counts.insert(kind, 0);
    }
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| StoreError::Io {
            path: tasks_dir.display().to_string(),
            message: e.to_string(),
        })?;
        let file = writers.get_mut(&record.task).unwrap();
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
        *counts.get_mut(&record.task).unwrap() += 1;
    }
    Ok(counts)
}
